//! Three-regime decomposition of the transfer-matrix recursion.
//!
//! For a point `z` the deterministic part `A_k = [[z_k, -1], [1, 0]]` of `T_k`
//! is hyperbolic while `|z_k| > 2` (`k <= k0 = floor(z^2 n / 4)`) and elliptic
//! afterwards. A step-dependent basis `P_k` diagonalizes (hyperbolic) or
//! rotates (elliptic) `A_k`; inside the window `|k - k0| < ell0` the basis is
//! frozen at `P_{k0 - ell0}`. The recursion vector in that basis is
//! `Y_k = P_k^{-1} X_k`.

use serde::{Deserialize, Serialize};

use crate::ensemble::JacobiCoefficients;
use crate::error::{Error, Result};
use crate::numerics::{exponent_of, pow2, Kahan};
use crate::recursion::Prepared;

pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

#[inline]
pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

#[inline]
pub fn mat_vec(a: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

/// Largest singular value of a 2x2 matrix.
pub fn op_norm(a: &Mat2) -> f64 {
    let f2 = a[0][0].powi(2) + a[0][1].powi(2) + a[1][0].powi(2) + a[1][1].powi(2);
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (f2 * f2 - 4.0 * det * det).max(0.0).sqrt();
    ((f2 + disc) / 2.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Hyperbolic,
    Parabolic,
    Elliptic,
}

/// Spectral data of `A_k`: `alpha >= 1` when `|z_k| >= 2`, else the rotation angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaTheta {
    Alpha(f64),
    Theta(f64),
}

/// `(|x| + sqrt(x^2 - 4)) / 2`, clamped to 1 at the boundary.
#[inline]
pub fn alpha_of(zk: f64) -> f64 {
    (zk.abs() + (zk * zk - 4.0).max(0.0).sqrt()) / 2.0
}

/// `atan2(sqrt(4 - x^2), x)`, in `[0, pi]`.
#[inline]
pub fn theta_of(zk: f64) -> f64 {
    (4.0 - zk * zk).max(0.0).sqrt().atan2(zk)
}

/// `z_k = z sqrt(n/k)`.
#[inline]
pub fn z_k(z: f64, n: usize, k: usize) -> f64 {
    z * (n as f64 / k as f64).sqrt()
}

/// `floor(z^2 n / 4)`.
pub fn critical_time(z: f64, n: usize) -> usize {
    (z * z * n as f64 / 4.0).floor() as usize
}

/// `alpha_{k,z}` for `k <= k0`, `theta_{k,z}` afterwards.
pub fn alpha_theta(k: usize, z: f64, n: usize) -> Result<AlphaTheta> {
    if k == 0 || k > n {
        return Err(Error::Domain(format!("step {k} outside 1..={n}")));
    }
    let zk = z_k(z, n, k);
    Ok(if k <= critical_time(z, n) { AlphaTheta::Alpha(alpha_of(zk)) } else { AlphaTheta::Theta(theta_of(zk)) })
}

/// One block `(lo, hi]` of the hyperbolic or elliptic partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub index: usize,
    pub lo: usize,
    pub hi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSchedule {
    pub z: f64,
    pub n: usize,
    pub k0: usize,
    pub ell0: usize,
    pub k_delta: usize,
    pub kappa: f64,
    pub delta: f64,
    pub i_o: usize,
    pub i_1: usize,
    pub j_o: usize,
    pub j_1: usize,
    /// `(i, m_i)` for `i = i_o..=i_1`, `m_i` strictly decreasing.
    pub hyperbolic_boundaries: Vec<(usize, usize)>,
    /// `(i, k_i)` for `i = j_o..=j_1`, `k_i` strictly increasing.
    pub elliptic_boundaries: Vec<(usize, usize)>,
}

/// `floor(cbrt(x))` for integers, exact.
fn icbrt(x: u128) -> u128 {
    let mut r = (x as f64).cbrt().floor() as u128;
    while r > 0 && r * r * r > x {
        r -= 1;
    }
    while (r + 1) * (r + 1) * (r + 1) <= x {
        r += 1;
    }
    r
}

/// `floor(i^{2/3} k0^{1/3})`.
fn hyper_offset(i: usize, k0: usize) -> usize {
    icbrt((i as u128) * (i as u128) * k0 as u128) as usize
}

/// `floor(i^4 k0^{1/3})`.
fn ellip_offset(i: usize, k0: usize) -> usize {
    let i = i as u128;
    match i.checked_pow(12).and_then(|p| p.checked_mul(k0 as u128)) {
        Some(x) => icbrt(x) as usize,
        None => ((i as f64).powi(4) * (k0 as f64).cbrt()).floor() as usize,
    }
}

/// `floor(kappa n^{1/3})`, exact for integer `kappa^3 n`.
fn window(kappa: f64, n: usize) -> usize {
    let x = kappa.powi(3) * n as f64;
    let mut r = (kappa * (n as f64).cbrt()).floor();
    while r > 0.0 && r * r * r > x {
        r -= 1.0;
    }
    while (r + 1.0).powi(3) <= x {
        r += 1.0;
    }
    r as usize
}

/// Critical time, window, cutoff and block partitions for `(z, n)`.
pub fn build_schedule(z: f64, n: usize, kappa: f64, delta: f64) -> Result<RegimeSchedule> {
    if !(z != 0.0 && z.abs() < 2.0) {
        return Err(Error::Domain(format!("z = {z} must satisfy 0 < |z| < 2")));
    }
    if !(kappa >= 1.0) {
        return Err(Error::param("kappa", format!("must be >= 1, got {kappa}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", format!("must lie in (0, 1), got {delta}")));
    }
    let k0 = critical_time(z, n);
    let ell0 = window(kappa, n);
    if k0 <= ell0 {
        return Err(Error::param("n", format!("critical time k0 = {k0} must exceed the window ell0 = {ell0}")));
    }
    let dn = (delta * n as f64).floor() as usize;
    if dn >= k0 || ((k0 - dn) as f64) < delta * n as f64 {
        return Err(Error::param(
            "delta",
            format!("cutoff k0 - floor(delta n) must be at least delta n (z = {z}, n = {n}, delta = {delta})"),
        ));
    }
    let k_delta = k0 - dn;

    // hyperbolic: m_i = k0 - floor(i^{2/3} k0^{1/3}), from k0 - ell0 down to k_delta
    let mut i_o = 1;
    while hyper_offset(i_o, k0) < ell0 {
        i_o += 1;
    }
    let mut hyperbolic_boundaries = Vec::new();
    let mut i_1 = i_o;
    if k_delta < k0 - ell0 {
        hyperbolic_boundaries.push((i_o, k0 - ell0));
        let mut i = i_o + 1;
        loop {
            let off = hyper_offset(i, k0);
            let m = k0.saturating_sub(off);
            if m <= k_delta {
                hyperbolic_boundaries.push((i, k_delta));
                i_1 = i;
                break;
            }
            if m < hyperbolic_boundaries.last().unwrap().1 {
                hyperbolic_boundaries.push((i, m));
            }
            i += 1;
        }
    }

    // elliptic: k_i = k0 + floor(i^4 k0^{1/3}), from k0 + ell0 up to n
    let mut j_o = 0;
    while ellip_offset(j_o + 1, k0) <= ell0 {
        j_o += 1;
    }
    let mut elliptic_boundaries = Vec::new();
    let mut j_1 = j_o;
    if k0 + ell0 < n {
        elliptic_boundaries.push((j_o, k0 + ell0));
        let mut i = j_o + 1;
        loop {
            let k = k0 + ellip_offset(i, k0);
            if k >= n {
                elliptic_boundaries.push((i, n));
                j_1 = i;
                break;
            }
            if k > elliptic_boundaries.last().unwrap().1 {
                elliptic_boundaries.push((i, k));
            }
            i += 1;
        }
    }

    Ok(RegimeSchedule {
        z,
        n,
        k0,
        ell0,
        k_delta,
        kappa,
        delta,
        i_o,
        i_1,
        j_o,
        j_1,
        hyperbolic_boundaries,
        elliptic_boundaries,
    })
}

/// Change of basis at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisAtStep {
    pub regime: Regime,
    /// `alpha_k` (hyperbolic and parabolic steps use the value at their basis step).
    pub alpha: f64,
    /// `theta_k` (elliptic steps only, 0 otherwise).
    pub theta: f64,
    pub p: Mat2,
    pub p_inv: Mat2,
}

impl RegimeSchedule {
    pub fn regime(&self, k: usize) -> Regime {
        if k + self.ell0 <= self.k0 {
            Regime::Hyperbolic
        } else if k >= self.k0 + self.ell0 {
            Regime::Elliptic
        } else {
            Regime::Parabolic
        }
    }

    /// Contributing hyperbolic blocks `(m_{i+1}, m_i]`, labelled `i`.
    pub fn hyperbolic_blocks(&self) -> Vec<Block> {
        self.hyperbolic_boundaries
            .windows(2)
            .map(|w| Block { index: w[0].0, lo: w[1].1, hi: w[0].1 })
            .collect()
    }

    /// Elliptic blocks `(k_i, k_{i+1}]`, labelled `i`.
    pub fn elliptic_blocks(&self) -> Vec<Block> {
        self.elliptic_boundaries
            .windows(2)
            .map(|w| Block { index: w[0].0, lo: w[0].1, hi: w[1].1 })
            .collect()
    }

    /// `P_k` and its inverse. `k = 0` gives the identity.
    pub fn basis(&self, k: usize) -> BasisAtStep {
        if k == 0 {
            return BasisAtStep { regime: Regime::Hyperbolic, alpha: f64::NAN, theta: 0.0, p: IDENTITY, p_inv: IDENTITY };
        }
        match self.regime(k) {
            Regime::Hyperbolic => self.hyperbolic_basis(k, Regime::Hyperbolic),
            Regime::Parabolic => self.hyperbolic_basis(self.k0 - self.ell0, Regime::Parabolic),
            Regime::Elliptic => {
                let zk = z_k(self.z, self.n, k);
                let r = (4.0 - zk * zk).max(0.0).sqrt();
                let p = [[r / 2.0, zk / 2.0], [0.0, 1.0]];
                let p_inv = [[2.0 / r, -zk / r], [0.0, 1.0]];
                BasisAtStep { regime: Regime::Elliptic, alpha: f64::NAN, theta: theta_of(zk), p, p_inv }
            }
        }
    }

    fn hyperbolic_basis(&self, k: usize, regime: Regime) -> BasisAtStep {
        let zk = z_k(self.z, self.n, k);
        let alpha = alpha_of(zk);
        let s = self.z.signum() / alpha;
        let det = 1.0 - s * s;
        BasisAtStep {
            regime,
            alpha,
            theta: 0.0,
            p: [[1.0, s], [s, 1.0]],
            p_inv: [[1.0 / det, -s / det], [-s / det, 1.0 / det]],
        }
    }

    /// Increment `mu_k` of the deterministic mean.
    pub fn mu(&self, k: usize, v: f64) -> f64 {
        match self.regime(k) {
            Regime::Hyperbolic => {
                alpha_of(z_k(self.z, self.n, k)).ln() - (v - 1.0) / (4.0 * (self.k0 - k) as f64)
            }
            Regime::Parabolic => 0.0,
            Regime::Elliptic => (v - 1.0) / (4.0 * (k - self.k0) as f64),
        }
    }
}

/// `eta_{k,z} = i^{-2/3}` on the hyperbolic block `(m_{i+1}, m_i]`; `k_delta` maps to `i_1`.
pub fn eta_curve(schedule: &RegimeSchedule, k: usize) -> Result<f64> {
    if schedule.hyperbolic_boundaries.len() < 2 || k < schedule.k_delta || k + schedule.ell0 > schedule.k0 {
        return Err(Error::Domain(format!(
            "step {k} outside the contributing hyperbolic range [{}, {}]",
            schedule.k_delta,
            schedule.k0 - schedule.ell0
        )));
    }
    if k == schedule.k_delta {
        return Ok((schedule.i_1 as f64).powf(-2.0 / 3.0));
    }
    let b = schedule
        .hyperbolic_blocks()
        .into_iter()
        .find(|b| k > b.lo && k <= b.hi)
        .expect("blocks cover the range");
    Ok((b.index as f64).powf(-2.0 / 3.0))
}

/// One recorded step of the conjugated recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub k: usize,
    pub psi: f64,
    #[serde(rename = "W")]
    pub w: f64,
    pub zeta: f64,
    pub log_norm_y: f64,
    #[serde(rename = "M")]
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub z: f64,
    pub n: usize,
    pub checkpoints: Vec<Checkpoint>,
    /// First step at which `Y` vanished; later checkpoints are absent.
    pub flagged_at: Option<usize>,
    /// `Y_k` direction at the last checkpoint (unit norm).
    pub direction: [f64; 2],
}

/// Which steps to record.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoints {
    /// `k = 1`, every multiple of the stride, and `k = n`.
    Stride(usize),
    /// Exactly these steps (sorted, within `1..=n`); the sweep stops at the last one.
    At(Vec<usize>),
}

/// Scaled `Y` state: `Y = (y0, y1) * 2^e`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct YState {
    pub y: [f64; 2],
    pub e: i64,
}

impl YState {
    pub fn log_norm(&self) -> f64 {
        self.y[0].hypot(self.y[1]).ln() + self.e as f64 * std::f64::consts::LN_2
    }
}

/// Advance `Y` from step `start` (state `y0` in the `P_start` basis) through `end`,
/// calling `visit(k, state, basis_k)` after each step. Stops early on an exact zero.
pub(crate) fn y_sweep(
    prep: &Prepared,
    schedule: &RegimeSchedule,
    start: usize,
    y0: [f64; 2],
    end: usize,
    mut visit: impl FnMut(usize, &YState, &BasisAtStep) -> bool,
) -> Option<usize> {
    let z = schedule.z;
    let mut st = YState { y: y0, e: 0 };
    let mut prev = schedule.basis(start);
    for k in start + 1..=end {
        let cur = schedule.basis(k);
        let x = mat_vec(&prev.p, st.y);
        let t = prep.transfer(k, z);
        let x = mat_vec(&t, x);
        let y = mat_vec(&cur.p_inv, x);
        let m = y[0].abs().max(y[1].abs());
        if m == 0.0 || !m.is_finite() {
            return Some(k);
        }
        let ex = exponent_of(m);
        let f = pow2(-ex);
        st.y = [y[0] * f, y[1] * f];
        st.e += ex as i64;
        if !visit(k, &st, &cur) {
            return None;
        }
        prev = cur;
    }
    None
}

fn checkpoint_of(k: usize, st: &YState, m: f64) -> Checkpoint {
    let [a, b] = st.y;
    let nrm2 = a * a + b * b;
    let mut zeta = b.atan2(a);
    if zeta < 0.0 {
        zeta += std::f64::consts::TAU;
    }
    if zeta >= std::f64::consts::TAU {
        zeta = 0.0;
    }
    let log_norm_y = st.log_norm();
    Checkpoint { k, psi: log_norm_y - m, w: (b * b / nrm2).clamp(0.0, 1.0), zeta, log_norm_y, m }
}

/// Run `Y_k = P_k^{-1} X_k` with per-step renormalization and record `psi`, `W`, `zeta`, `M`.
pub fn conjugated_trajectory(
    coeffs: &JacobiCoefficients,
    z: f64,
    schedule: &RegimeSchedule,
    plan: &Checkpoints,
) -> Result<Trajectory> {
    let prep = Prepared::new(coeffs);
    conjugated_trajectory_prepared(&prep, coeffs.v, z, schedule, plan)
}

pub fn conjugated_trajectory_prepared(
    prep: &Prepared,
    v: f64,
    z: f64,
    schedule: &RegimeSchedule,
    plan: &Checkpoints,
) -> Result<Trajectory> {
    let n = prep.n;
    if schedule.n != n || schedule.z != z {
        return Err(Error::Precondition(format!(
            "schedule is for (z = {}, n = {}), trajectory asked for (z = {z}, n = {n})",
            schedule.z, schedule.n
        )));
    }
    let (marks, end): (Option<&[usize]>, usize) = match plan {
        Checkpoints::Stride(0) => return Err(Error::param("stride", "must be at least 1")),
        Checkpoints::Stride(_) => (None, n),
        Checkpoints::At(ks) => {
            if ks.windows(2).any(|w| w[0] >= w[1]) || ks.first().is_some_and(|&k| k == 0) || ks.last().is_some_and(|&k| k > n) {
                return Err(Error::Precondition("checkpoints must be strictly increasing within 1..=n".into()));
            }
            (Some(ks.as_slice()), ks.last().copied().unwrap_or(0))
        }
    };
    let stride = if let Checkpoints::Stride(s) = plan { *s } else { 1 };
    let mut mean = Kahan::new();
    let mut out = Vec::new();
    let mut next = 0;
    let mut last = YState { y: [1.0, 0.0], e: 0 };
    let flagged_at = y_sweep(prep, schedule, 0, [1.0, 0.0], end, |k, st, _| {
        mean.add(schedule.mu(k, v));
        let record = match marks {
            None => k == 1 || k % stride == 0 || k == n,
            Some(ks) => {
                if next < ks.len() && ks[next] == k {
                    next += 1;
                    true
                } else {
                    false
                }
            }
        };
        if record {
            out.push(checkpoint_of(k, st, mean.value()));
        }
        last = *st;
        true
    });
    let nrm = last.y[0].hypot(last.y[1]);
    Ok(Trajectory { z, n, checkpoints: out, flagged_at, direction: [last.y[0] / nrm, last.y[1] / nrm] })
}

/// Goodness of every contributing hyperbolic and elliptic block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFlags {
    pub hyperbolic: Vec<(usize, bool)>,
    pub elliptic: Vec<(usize, bool)>,
}

/// Hyperbolic block `i` is good when `W <= 2 r i^{-2/3}` on it; elliptic block `i`
/// is good when the phase tracks the summed rotation angles within `i^{-delta_exponent}`.
pub fn good_block_flags(
    trajectory: &Trajectory,
    schedule: &RegimeSchedule,
    r: f64,
    delta_exponent: f64,
) -> Result<BlockFlags> {
    let cps = &trajectory.checkpoints;
    let lookup = |k: usize| -> Result<&Checkpoint> {
        cps.binary_search_by_key(&k, |c| c.k)
            .map(|i| &cps[i])
            .map_err(|_| Error::Precondition(format!("checkpoint at step {k} missing (stride 1 required on tested blocks)")))
    };
    let mut hyperbolic = Vec::new();
    for b in schedule.hyperbolic_blocks() {
        let eta = (b.index as f64).powf(-2.0 / 3.0);
        let mut good = true;
        for k in b.lo + 1..=b.hi {
            good &= lookup(k)?.w <= 2.0 * r * eta;
        }
        hyperbolic.push((b.index, good));
    }
    let mut elliptic = Vec::new();
    let tau = std::f64::consts::TAU;
    for b in schedule.elliptic_blocks() {
        let tol = (b.index as f64).powf(-delta_exponent);
        let z0 = lookup(b.lo)?.zeta;
        let mut rot = Kahan::new();
        let mut good = true;
        for k in b.lo + 1..=b.hi {
            rot.add(theta_of(z_k(schedule.z, schedule.n, k)));
            let mut dev = (lookup(k)?.zeta - z0 - rot.value()).rem_euclid(tau);
            if dev > std::f64::consts::PI {
                dev -= tau;
            }
            good &= dev.abs() <= tol;
        }
        elliptic.push((b.index, good));
    }
    Ok(BlockFlags { hyperbolic, elliptic })
}

/// Deterministic product over the last `delta n` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailProduct {
    pub k: usize,
    pub norm: f64,
    pub entry: f64,
    pub predicted: f64,
    pub entry_error: f64,
}

/// `A_n ... A_k` for `k = ceil((1 - delta) n)`, its norm, and the error of the
/// closed form `(2/sqrt(4 - z^2)) sin(sum_{j=k}^{n} theta_j + theta_n)` for its `(1,1)` entry.
pub fn deterministic_tail_product(z: f64, n: usize, delta: f64) -> Result<TailProduct> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::param("delta", format!("must lie in [0, 1), got {delta}")));
    }
    if !(z.abs() < 2.0) {
        return Err(Error::Domain(format!("z = {z} outside (-2, 2)")));
    }
    let k = (((1.0 - delta) * n as f64).ceil() as usize).clamp(1, n);
    if k <= critical_time(z, n) {
        return Err(Error::Domain(format!(
            "steps {k}..={n} are not all elliptic (critical time {})",
            critical_time(z, n)
        )));
    }
    let mut prod = IDENTITY;
    let mut angle = Kahan::new();
    for j in k..=n {
        let zj = z_k(z, n, j);
        prod = mat_mul(&[[zj, -1.0], [1.0, 0.0]], &prod);
        angle.add(theta_of(zj));
    }
    let theta_n = theta_of(z);
    let predicted = 2.0 / (4.0 - z * z).sqrt() * (angle.value() + theta_n).sin();
    let entry = prod[0][0];
    Ok(TailProduct { k, norm: op_norm(&prod), entry, predicted, entry_error: (entry - predicted).abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::sample_gbe;
    use crate::recursion::scaled_states;
    use crate::seed::SeedSpec;
    use proptest::prelude::*;

    fn a_mat(zk: f64) -> Mat2 {
        [[zk, -1.0], [1.0, 0.0]]
    }

    #[test]
    fn schedule_basics() {
        let s = build_schedule(1.0, 1000, 1.0, 0.01).unwrap();
        assert_eq!(s.k0, 250);
        assert_eq!(s.ell0, 10);
        assert_eq!(s.k_delta, 240);
        assert!(build_schedule(1.0, 1000, 4.0, 0.3).is_err());
        assert!(build_schedule(0.0, 1000, 4.0, 0.01).is_err());
        assert!(build_schedule(1.0, 1000, 0.5, 0.01).is_err());
    }

    #[test]
    fn schedule_boundaries_follow_definitions() {
        let s = build_schedule(1.0, 1_000_000, 4.0, 0.05).unwrap();
        let k0 = s.k0 as f64;
        assert_eq!(s.hyperbolic_boundaries.first().unwrap(), &(s.i_o, s.k0 - s.ell0));
        assert_eq!(s.hyperbolic_boundaries.last().unwrap(), &(s.i_1, s.k_delta));
        assert!(s.hyperbolic_boundaries.windows(2).all(|w| w[0].1 > w[1].1));
        // off = floor(i^{2/3} k0^{1/3})  <=>  off^3 <= i^2 k0 < (off + 1)^3
        let floor_ok = |off: u128, x: u128| off.pow(3) <= x && x < (off + 1).pow(3);
        for &(i, m) in &s.hyperbolic_boundaries[1..s.hyperbolic_boundaries.len() - 1] {
            let off = (s.k0 - m) as u128;
            assert!(floor_ok(off, (i * i) as u128 * s.k0 as u128), "i = {i}");
        }
        let _ = k0;
        assert_eq!(s.elliptic_boundaries.first().unwrap(), &(s.j_o, s.k0 + s.ell0));
        assert_eq!(s.elliptic_boundaries.last().unwrap(), &(s.j_1, s.n));
        assert!(s.elliptic_boundaries.windows(2).all(|w| w[0].1 < w[1].1));
        assert!(((s.j_o as f64).powi(4) * k0.cbrt()).floor() as usize <= s.ell0);
        assert!((((s.j_o + 1) as f64).powi(4) * k0.cbrt()).floor() as usize > s.ell0);
        assert!(s.delta * s.n as f64 <= s.k_delta as f64);
    }

    #[test]
    fn schedule_golden_lists() {
        // z = 1, n = 1e6, kappa = 4, delta = 0.05: k0 = 250000, ell0 = 400, k0^{1/3} = 62.996
        let s = build_schedule(1.0, 1_000_000, 4.0, 0.05).unwrap();
        assert_eq!((s.k0, s.ell0, s.k_delta), (250_000, 400, 200_000));
        // evaluated independently with exact integer cube roots
        assert_eq!((s.i_o, s.i_1), (16, 22_361));
        assert_eq!((s.j_o, s.j_1), (1, 11));
        assert_eq!(s.hyperbolic_boundaries.len(), 22_361 - 16 + 1);
        let ell: Vec<usize> = s.elliptic_boundaries.iter().map(|b| b.1).collect();
        assert_eq!(ell, GOLDEN_ELLIPTIC.to_vec());
    }

    const GOLDEN_ELLIPTIC: [usize; 11] =
        [250_400, 251_007, 255_102, 266_126, 289_372, 331_642, 401_253, 508_031, 663_317, 879_960, 1_000_000];

    #[test]
    fn alpha_theta_examples() {
        assert_eq!(alpha_of(2.0), 1.0);
        assert!((theta_of(2f64.sqrt()) - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        match alpha_theta(2000, 1.0, 10_000).unwrap() {
            AlphaTheta::Alpha(a) => assert!((a - (5f64.sqrt() + 1.0) / 2.0).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        assert!(matches!(alpha_theta(3000, 1.0, 10_000).unwrap(), AlphaTheta::Theta(_)));
        assert!(alpha_theta(0, 1.0, 10).is_err());
    }

    #[test]
    fn alpha_nonincreasing_along_schedule() {
        for z in [-1.3, 0.4, 1.0] {
            let s = build_schedule(z, 100_000, 4.0, 0.01).unwrap();
            let mut prev = f64::INFINITY;
            for k in 1..=s.k0 {
                let AlphaTheta::Alpha(a) = alpha_theta(k, z, s.n).unwrap() else { panic!() };
                assert!(a <= prev);
                prev = a;
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn basis_conjugates_a(zabs in 0.2f64..1.8, neg in any::<bool>(), frac in 0.0f64..1.0, nexp in 4u32..7) {
            let n = 10usize.pow(nexp);
            let z = if neg { -zabs } else { zabs };
            let s = build_schedule(z, n, 1.0, 0.001).unwrap();
            let k = 1 + ((n - 1) as f64 * frac) as usize;
            let b = s.basis(k);
            let pp = mat_mul(&b.p, &b.p_inv);
            for i in 0..2 { for j in 0..2 {
                prop_assert!((pp[i][j] - IDENTITY[i][j]).abs() < 1e-12);
            }}
            let c = mat_mul(&b.p_inv, &mat_mul(&a_mat(z_k(z, n, k)), &b.p));
            match b.regime {
                Regime::Hyperbolic => {
                    let sg = z.signum();
                    let scale = b.alpha.max(1.0);
                    prop_assert!((c[0][0] - sg * b.alpha).abs() < 1e-10 * scale);
                    prop_assert!((c[1][1] - sg / b.alpha).abs() < 1e-10 * scale);
                    prop_assert!(c[0][1].abs() < 1e-10 * scale && c[1][0].abs() < 1e-10 * scale);
                }
                Regime::Elliptic => {
                    let (ct, st) = (b.theta.cos(), b.theta.sin());
                    prop_assert!((c[0][0] - ct).abs() < 1e-10 && (c[1][1] - ct).abs() < 1e-10);
                    prop_assert!((c[1][0] - st).abs() < 1e-10 && (c[0][1] + st).abs() < 1e-10);
                }
                Regime::Parabolic => {}
            }
        }
    }

    #[test]
    fn eta_curve_values() {
        let s = build_schedule(1.0, 1_000_000, 4.0, 0.05).unwrap();
        let b = s.hyperbolic_blocks().into_iter().find(|b| b.index == 300).unwrap();
        assert_eq!(eta_curve(&s, b.hi).unwrap(), 300f64.powf(-2.0 / 3.0));
        assert_eq!(eta_curve(&s, s.k0 - s.ell0).unwrap(), (s.i_o as f64).powf(-2.0 / 3.0));
        assert!(eta_curve(&s, s.k0).is_err());
        assert!(eta_curve(&s, s.k_delta - 1).is_err());
        let mut prev = 0.0;
        for k in (s.k_delta..=s.k0 - s.ell0).step_by(97) {
            let e = eta_curve(&s, k).unwrap();
            assert!(e >= prev);
            prev = e;
        }
        // block 8 value when it exists in a small schedule
        assert_eq!(8f64.powf(-2.0 / 3.0), 0.25);
    }

    #[test]
    fn trajectory_reconstructs_recursion() {
        let n = 20_000;
        for (z, beta) in [(1.0, 2.0), (-0.7, 1.0)] {
            let c = sample_gbe(beta, n, SeedSpec::new(12, 0)).unwrap();
            let s = build_schedule(z, n, 4.0, 0.01).unwrap();
            let t = conjugated_trajectory(&c, z, &s, &Checkpoints::Stride(1)).unwrap();
            assert!(t.flagged_at.is_none());
            let x = scaled_states(&c, z, &[1, n]).unwrap();
            let last = t.checkpoints.last().unwrap();
            let pd = mat_vec(&s.basis(n).p, t.direction);
            let rebuilt = last.m + last.psi + pd[0].hypot(pd[1]).ln();
            assert!((rebuilt - x[1].log_norm).abs() <= 1e-8 * x[1].log_norm.abs().max(1.0));
            assert!(t.checkpoints[0].w <= 100.0 / n as f64);
            for cp in &t.checkpoints {
                assert!((0.0..=1.0).contains(&cp.w));
                assert!((0.0..std::f64::consts::TAU).contains(&cp.zeta));
                assert_eq!(cp.psi, cp.log_norm_y - cp.m);
            }
        }
    }

    #[test]
    fn change_of_basis_sandwich() {
        let n = 5000;
        let z = 1.2;
        let c = sample_gbe(2.0, n, SeedSpec::new(13, 0)).unwrap();
        let s = build_schedule(z, n, 4.0, 0.01).unwrap();
        let t = conjugated_trajectory(&c, z, &s, &Checkpoints::Stride(1)).unwrap();
        let ks: Vec<usize> = (1..=n).collect();
        let xs = scaled_states(&c, z, &ks).unwrap();
        for (cp, x) in t.checkpoints.iter().zip(&xs) {
            let b = s.basis(cp.k);
            let bound = op_norm(&b.p).max(op_norm(&b.p_inv)).ln();
            assert!((cp.psi - (x.log_norm - cp.m)).abs() <= bound + 1e-9, "k = {}", cp.k);
        }
    }

    #[test]
    fn explicit_checkpoints_stop_early() {
        let c = sample_gbe(2.0, 1000, SeedSpec::new(1, 0)).unwrap();
        let s = build_schedule(1.0, 1000, 1.0, 0.01).unwrap();
        let t = conjugated_trajectory(&c, 1.0, &s, &Checkpoints::At(vec![3, 10, 400])).unwrap();
        let ks: Vec<usize> = t.checkpoints.iter().map(|c| c.k).collect();
        assert_eq!(ks, vec![3, 10, 400]);
        assert!(conjugated_trajectory(&c, 1.0, &s, &Checkpoints::At(vec![10, 3])).is_err());
        assert!(conjugated_trajectory(&c, 1.0, &s, &Checkpoints::Stride(0)).is_err());
    }

    #[test]
    fn zero_noise_elliptic_blocks_are_good() {
        let n = 200_000;
        let c = JacobiCoefficients::zero_noise(n);
        for z in [1.0, -0.6] {
            let s = build_schedule(z, n, 4.0, 0.01).unwrap();
            let t = conjugated_trajectory(&c, z, &s, &Checkpoints::Stride(1)).unwrap();
            let f = good_block_flags(&t, &s, 1.0, 0.25).unwrap();
            assert!(!f.elliptic.is_empty());
            assert!(f.elliptic.iter().all(|&(_, g)| g), "{:?}", f.elliptic);
            assert!(!f.hyperbolic.is_empty());
        }
    }

    #[test]
    fn block_flags_need_dense_checkpoints() {
        let c = sample_gbe(2.0, 10_000, SeedSpec::new(1, 0)).unwrap();
        let s = build_schedule(1.0, 10_000, 4.0, 0.01).unwrap();
        let t = conjugated_trajectory(&c, 1.0, &s, &Checkpoints::Stride(7)).unwrap();
        assert!(matches!(good_block_flags(&t, &s, 1.0, 0.25), Err(Error::Precondition(_))));
    }

    #[test]
    fn tail_product_single_factor() {
        for (z, n) in [(1.0, 1000usize), (-0.5, 4000)] {
            let t = deterministic_tail_product(z, n, 0.0).unwrap();
            assert_eq!(t.k, n);
            assert_eq!(t.entry, z);
            assert!(t.entry_error <= 1e-12, "{t:?}");
        }
        assert!(deterministic_tail_product(1.0, 1000, 0.9).is_err());
    }

    #[test]
    fn tail_product_bounded() {
        for n in [100_000usize, 1_000_000] {
            for delta in [0.01, 0.05] {
                let t = deterministic_tail_product(1.0, n, delta).unwrap();
                assert!(t.norm <= 20.0, "{t:?}");
            }
        }
    }
}
