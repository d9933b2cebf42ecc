//! Noise variances along the recursion, their cumulative sums and the time change.
//!
//! Hyperbolic steps use the exact variance of the driving noise `g_k`. Elliptic
//! steps have two versions: the displayed combination of `E c^2`, `E d^2`,
//! `E cd` ([`sigma2_elliptic`]) and its average over a uniform phase
//! ([`sigma2_elliptic_averaged`]). Profiles are built from the averaged one;
//! [`VarianceProfile::elliptic_ratio`] reports how far apart the two are.

use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleSpec, JacobiCoefficients, StepMoments};
use crate::error::{Error, Result};
use crate::numerics::Kahan;
use crate::regimes::{alpha_of, theta_of, z_k, Regime, RegimeSchedule};

/// Second moments of the elliptic noise pair `(c_k, d_k)` at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFunctionals {
    pub var_c: f64,
    pub var_d: f64,
    pub cov_cd: f64,
    pub theta: f64,
}

fn k_terms(k: usize, m: &StepMoments) -> (f64, f64) {
    let kf = k as f64;
    let a_term = if k <= 1 { 0.0 } else { m.var_a2_prev / (kf * (kf - 1.0)) };
    (m.var_b / kf, a_term)
}

/// `E[g_k^2] = (1 - alpha^-2)^-2 (alpha^-2 Var b_k / k + alpha^-4 Var a_{k-1}^2 / (k (k-1)))`.
pub fn sigma2_hyperbolic(schedule: &RegimeSchedule, k: usize, moments: &StepMoments) -> Result<f64> {
    if k == 0 || k + schedule.ell0 > schedule.k0 {
        return Err(Error::Domain(format!("step {k} is not hyperbolic (k0 = {}, ell0 = {})", schedule.k0, schedule.ell0)));
    }
    let ia2 = alpha_of(z_k(schedule.z, schedule.n, k)).powi(-2);
    let (b_term, a_term) = k_terms(k, moments);
    Ok((ia2 * b_term + ia2 * ia2 * a_term) / ((1.0 - ia2) * (1.0 - ia2)))
}

/// Moments of `c_k = -(2/sqrt(4 - z_k^2)) (z_k (b_k - E b_k)/(2 sqrt k) + (a_{k-1}^2 - E)/sqrt(k(k-1)))`
/// and `d_k = -(b_k - E b_k)/sqrt k`.
pub fn noise_functionals(schedule: &RegimeSchedule, k: usize, moments: &StepMoments) -> Result<NoiseFunctionals> {
    if k < schedule.k0 + schedule.ell0 || k > schedule.n {
        return Err(Error::Domain(format!("step {k} is not elliptic (k0 = {}, ell0 = {})", schedule.k0, schedule.ell0)));
    }
    let zk = z_k(schedule.z, schedule.n, k);
    let r2 = 4.0 - zk * zk;
    let (b_term, a_term) = k_terms(k, moments);
    Ok(NoiseFunctionals {
        var_c: (4.0 / r2) * (zk * zk * b_term / 4.0 + a_term),
        var_d: b_term,
        cov_cd: (2.0 / r2.sqrt()) * zk * b_term / 2.0,
        theta: theta_of(zk),
    })
}

/// `(E c^2 + E d^2)(1 + sin^2(theta)/2) + E(cd)(sin(2 theta) - cos^2(theta)/2)`.
pub fn sigma2_elliptic(schedule: &RegimeSchedule, k: usize, moments: &StepMoments) -> Result<f64> {
    let f = noise_functionals(schedule, k, moments)?;
    let (s, c) = f.theta.sin_cos();
    Ok((f.var_c + f.var_d) * (1.0 + 0.5 * s * s) + f.cov_cd * ((2.0 * f.theta).sin() - 0.5 * c * c))
}

/// Mean of `E[w_k(zeta)^2]` over a uniform phase `zeta`, where
/// `w_k(zeta) = c_k sin(theta + zeta) cos(zeta) + d_k sin(theta + zeta) sin(zeta)`.
pub fn sigma2_elliptic_averaged(schedule: &RegimeSchedule, k: usize, moments: &StepMoments) -> Result<f64> {
    let f = noise_functionals(schedule, k, moments)?;
    let c2 = (2.0 * f.theta).cos();
    Ok(f.var_c / 4.0 * (1.0 - 0.5 * c2) + f.var_d / 4.0 * (1.0 + 0.5 * c2) + f.cov_cd * (2.0 * f.theta).sin() / 4.0)
}

/// Approximate variance: `v/(2(k0-k))` below the window, `v/(4(k-k0))` above it, 0 inside.
pub fn hat_sigma2(schedule: &RegimeSchedule, k: usize, v: f64) -> f64 {
    let (k0, l0) = (schedule.k0, schedule.ell0);
    if k + l0 <= k0 {
        v / (2.0 * (k0 - k) as f64)
    } else if k > k0 + l0 {
        v / (4.0 * (k - k0) as f64)
    } else {
        0.0
    }
}

/// Realized hyperbolic noise `g_k` for one coefficient draw (`E b = 0`, `E a_{k-1}^2 = k - 1`).
pub fn g_noise(coeffs: &JacobiCoefficients, schedule: &RegimeSchedule, k: usize) -> f64 {
    let kf = k as f64;
    let ia = 1.0 / alpha_of(z_k(schedule.z, schedule.n, k));
    let a_dev = if k <= 1 { 0.0 } else { (coeffs.a_sq(k - 1) - (kf - 1.0)) / (kf * (kf - 1.0)).sqrt() };
    (ia * coeffs.b(k) / kf.sqrt() + ia * ia * a_dev) / (1.0 - ia * ia)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile {
    pub z: f64,
    pub n: usize,
    pub v: f64,
    /// `sigma2[k-1]` for `k = 1..=n`.
    pub sigma2: Vec<f64>,
    #[serde(rename = "Sigma2")]
    pub sigma2_cum: Vec<f64>,
    pub hat_sigma2: Vec<f64>,
    #[serde(rename = "hat_Sigma2")]
    pub hat_sigma2_cum: Vec<f64>,
    /// `time_change[t-1] = n_t` for `t = 1..=T_z`.
    pub time_change: Vec<usize>,
    #[serde(rename = "T_z")]
    pub t_z: usize,
}

/// Exact and approximate variance profiles for `(z, n)` and the resulting time change.
pub fn build_profile(schedule: &RegimeSchedule, spec: &EnsembleSpec) -> Result<VarianceProfile> {
    let n = schedule.n;
    let v = spec.noise_variance();
    let mut sigma2 = Vec::with_capacity(n);
    let mut hat = Vec::with_capacity(n);
    for k in 1..=n {
        let m = spec.moments(k);
        let s = match schedule.regime(k) {
            Regime::Hyperbolic => sigma2_hyperbolic(schedule, k, &m)?,
            Regime::Elliptic => sigma2_elliptic_averaged(schedule, k, &m)?,
            Regime::Parabolic => 0.0,
        };
        sigma2.push(s);
        hat.push(hat_sigma2(schedule, k, v));
    }
    let sigma2_cum = prefix(&sigma2);
    let hat_sigma2_cum = prefix(&hat);
    let total = *sigma2_cum.last().unwrap_or(&0.0);
    let t_z = if v > 0.0 { (2.0 / v * total).ceil() as usize } else { 0 };
    let mut p = VarianceProfile {
        z: schedule.z,
        n,
        v,
        sigma2,
        sigma2_cum,
        hat_sigma2: hat,
        hat_sigma2_cum,
        time_change: Vec::new(),
        t_z,
    };
    p.time_change = (1..=t_z).map(|t| p.time_change_at(t as f64)).collect();
    Ok(p)
}

fn prefix(xs: &[f64]) -> Vec<f64> {
    let mut acc = Kahan::new();
    xs.iter()
        .map(|&x| {
            acc.add(x);
            acc.value()
        })
        .collect()
}

impl VarianceProfile {
    /// `n_t = min{k : Sigma^2_k >= v t / 2} ^ n` for real `t`.
    pub fn time_change_at(&self, t: f64) -> usize {
        let target = self.v * t / 2.0;
        let idx = self.sigma2_cum.partition_point(|&s| s < target);
        (idx + 1).min(self.n)
    }

    /// `Sigma^2_k`, with `Sigma^2_0 = 0`.
    pub fn cumulative(&self, k: usize) -> f64 {
        if k == 0 { 0.0 } else { self.sigma2_cum[k - 1] }
    }

    /// Ratio of the displayed elliptic variance to the phase-averaged one, summed per elliptic block.
    pub fn elliptic_ratio(&self, schedule: &RegimeSchedule, spec: &EnsembleSpec) -> Result<Vec<(usize, f64)>> {
        schedule
            .elliptic_blocks()
            .iter()
            .map(|b| {
                let (mut num, mut den) = (Kahan::new(), Kahan::new());
                for k in b.lo + 1..=b.hi {
                    let m = spec.moments(k);
                    num.add(sigma2_elliptic(schedule, k, &m)?);
                    den.add(sigma2_elliptic_averaged(schedule, k, &m)?);
                }
                Ok((b.index, num.value() / den.value()))
            })
            .collect()
    }
}
