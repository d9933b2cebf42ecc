//! Maxima of the centered field over nets, Monte Carlo drivers, and the
//! time-changed diagnostics (barrier, truncated field, covariance).

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{sample, EnsembleSpec, JacobiCoefficients};
use crate::error::{Error, Result};
use crate::numerics::{covariance, kahan_sum, mean_var, Kahan};
use crate::recursion::{eval_prepared_zs, scaled_states, Prepared};
use crate::regimes::{alpha_of, build_schedule, conjugated_trajectory_prepared, y_sweep, z_k, Checkpoints, Regime, RegimeSchedule};
use crate::seed::SeedSpec;
use crate::variance::{build_profile, VarianceProfile};

/// Largest Chebyshev degree used by the default net (`2 * 8192 + 1 = 16385` nodes).
pub const DEFAULT_NET_DEGREE: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetKind {
    Chebyshev { degree: usize },
    Uniform { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalNet {
    pub points: Vec<f64>,
    pub kind: NetKind,
}

/// `cos(pi (k-1) / (2n))` for `k = 1..=2n+1`.
pub fn chebyshev_nodes(n: usize) -> Vec<f64> {
    (0..=2 * n).map(|j| (std::f64::consts::PI * j as f64 / (2 * n) as f64).cos()).collect()
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::param("eta", format!("must lie in (0, 1), got {eta}")));
    }
    Ok(())
}

fn in_bulk(z: f64, eta: f64) -> bool {
    z.abs() >= eta && z.abs() <= 2.0 - eta
}

/// Chebyshev nodes scaled to `[-2, 2]` and restricted to `eta <= |z| <= 2 - eta`, ascending.
pub fn chebyshev_net(n: usize, eta: f64) -> Result<EvalNet> {
    if n == 0 {
        return Err(Error::param("degree", "must be at least 1"));
    }
    check_eta(eta)?;
    let mut points: Vec<f64> = chebyshev_nodes(n).into_iter().map(|x| 2.0 * x).filter(|&z| in_bulk(z, eta)).collect();
    points.reverse();
    Ok(EvalNet { points, kind: NetKind::Chebyshev { degree: n } })
}

/// `count` points, evenly spaced on each half `[eta, 2 - eta]` and its mirror image.
pub fn uniform_net(count: usize, eta: f64) -> Result<EvalNet> {
    check_eta(eta)?;
    if count == 0 {
        return Err(Error::param("count", "must be at least 1"));
    }
    let pos = count.div_ceil(2);
    let neg = count / 2;
    let side = |m: usize| -> Vec<f64> {
        if m == 1 {
            vec![1.0]
        } else {
            (0..m).map(|i| eta + (2.0 - 2.0 * eta) * i as f64 / (m - 1) as f64).collect()
        }
    };
    let mut points: Vec<f64> = side(neg).into_iter().map(|z| -z).collect();
    points.extend(side(pos));
    points.sort_by(f64::total_cmp);
    Ok(EvalNet { points, kind: NetKind::Uniform { count } })
}

/// Net used when none is specified: Chebyshev of degree `min(n, 8192)`.
pub fn default_net(n: usize, eta: f64) -> Result<EvalNet> {
    chebyshev_net(n.min(DEFAULT_NET_DEGREE), eta)
}

/// Maximum of the centered field for one realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxRecord {
    pub n: usize,
    pub beta: f64,
    pub stream_id: u64,
    pub max_centered: f64,
    pub argmax_z: f64,
    pub runtime_ms: u64,
}

/// Exact maximum over the net; flagged points are skipped and ties go to the smallest `z`.
pub fn max_centered(coeffs: &JacobiCoefficients, net: &EvalNet) -> Result<MaxRecord> {
    let prep = Prepared::new(coeffs);
    max_centered_prepared(&prep, coeffs.v, &net.points)
}

fn max_centered_prepared(prep: &Prepared, v: f64, zs: &[f64]) -> Result<MaxRecord> {
    if zs.is_empty() {
        return Err(Error::Precondition("empty net".into()));
    }
    let mut order: Vec<usize> = (0..zs.len()).collect();
    order.sort_by(|&i, &j| zs[i].total_cmp(&zs[j]));
    let res = eval_prepared_zs(prep, zs);
    let mut best: Option<(f64, f64)> = None;
    for i in order {
        let r = &res[i];
        if r.flagged || !r.centered.is_finite() {
            continue;
        }
        if best.is_none_or(|(m, _)| r.centered > m) {
            best = Some((r.centered, r.z));
        }
    }
    let (max, z) = best.ok_or_else(|| Error::Numerical("every net point was flagged".into()))?;
    Ok(MaxRecord { n: prep.n, beta: 2.0 / v, stream_id: 0, max_centered: max, argmax_z: z, runtime_ms: 0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NetSpec {
    /// Chebyshev net of degree `min(n, cap)`; `cap = None` uses the full degree `n`.
    Chebyshev { cap: Option<usize> },
    Uniform { count: usize },
}

impl NetSpec {
    pub fn build(&self, n: usize, eta: f64) -> Result<EvalNet> {
        match *self {
            NetSpec::Chebyshev { cap } => chebyshev_net(cap.map_or(n, |c| n.min(c)), eta),
            NetSpec::Uniform { count } => uniform_net(count, eta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub ensemble: EnsembleSpec,
    pub ns: Vec<usize>,
    pub replicas: u64,
    pub net: NetSpec,
    pub eta: f64,
    pub master_seed: u64,
    /// Record wall-clock time per replica (otherwise `runtime_ms = 0`, keeping output reproducible).
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaFailure {
    pub n: usize,
    pub stream_id: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub records: Vec<MaxRecord>,
    pub failures: Vec<ReplicaFailure>,
}

/// Sample, evaluate and maximize for every `(n, replica)`; output sorted by `(n, stream_id)`.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutput> {
    plan.ensemble.validate()?;
    let mut ns = plan.ns.clone();
    ns.sort_unstable();
    ns.dedup();
    let nets: Vec<EvalNet> = ns.iter().map(|&n| plan.net.build(n, plan.eta)).collect::<Result<_>>()?;
    let units: Vec<(usize, u64)> = (0..ns.len()).flat_map(|i| (0..plan.replicas).map(move |r| (i, r))).collect();
    let results: Vec<std::result::Result<MaxRecord, ReplicaFailure>> = units
        .par_iter()
        .map(|&(i, r)| {
            let n = ns[i];
            let started = Instant::now();
            let seed = SeedSpec::for_replica(plan.master_seed, n, r);
            let run = || -> Result<MaxRecord> {
                let coeffs = sample(&plan.ensemble, n, seed)?;
                let prep = Prepared::new(&coeffs);
                max_centered_prepared(&prep, coeffs.v, &nets[i].points)
            };
            run()
                .map(|mut rec| {
                    rec.beta = plan.ensemble.beta();
                    rec.stream_id = r;
                    rec.runtime_ms = if plan.timing { started.elapsed().as_millis() as u64 } else { 0 };
                    rec
                })
                .map_err(|e| ReplicaFailure { n, stream_id: r, error: e.to_string() })
        })
        .collect();
    let mut out = ExperimentOutput::default();
    for r in results {
        match r {
            Ok(rec) => out.records.push(rec),
            Err(f) => out.failures.push(f),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope_logn: f64,
    pub slope_loglogn: f64,
    pub intercept: f64,
    /// Standard errors of the three coefficients, propagated from the replica scatter of each mean.
    pub stderr: [f64; 3],
    /// `(n, mean, replicas)` per distinct `n`.
    pub means: Vec<(usize, f64, usize)>,
    pub residuals: Vec<f64>,
}

/// Least squares of the per-`n` mean maximum on `(log n, log log n, 1)`.
pub fn fit_leading(records: &[MaxRecord]) -> Result<RegressionFit> {
    let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return Err(Error::param("n", format!("need at least 3 distinct n, got {}", ns.len())));
    }
    let mut means = Vec::new();
    let mut var_of_mean = Vec::new();
    for &n in &ns {
        let ys: Vec<f64> = records.iter().filter(|r| r.n == n).map(|r| r.max_centered).collect();
        let (m, v) = mean_var(&ys);
        means.push((n, m, ys.len()));
        var_of_mean.push(if ys.len() > 1 { v / ys.len() as f64 } else { f64::NAN });
    }
    let x: Vec<[f64; 3]> = ns.iter().map(|&n| {
        let l = (n as f64).ln();
        [l, l.ln(), 1.0]
    }).collect();
    let y: Vec<f64> = means.iter().map(|m| m.1).collect();
    let xtx_inv = invert3(&gram(&x))?;
    let xty = [0, 1, 2].map(|j| kahan_sum(x.iter().zip(&y).map(|(r, yi)| r[j] * yi)));
    let beta = [0, 1, 2].map(|i| (0..3).map(|j| xtx_inv[i][j] * xty[j]).sum::<f64>());
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(r, yi)| yi - (0..3).map(|j| r[j] * beta[j]).sum::<f64>()).collect();
    // sandwich with the known variances of the means: (X'X)^-1 X' S X (X'X)^-1
    let mut meat = [[0.0; 3]; 3];
    for (r, s) in x.iter().zip(&var_of_mean) {
        for i in 0..3 {
            for j in 0..3 {
                meat[i][j] += r[i] * r[j] * s;
            }
        }
    }
    let cov = mul3(&mul3(&xtx_inv, &meat), &xtx_inv);
    Ok(RegressionFit {
        slope_logn: beta[0],
        slope_loglogn: beta[1],
        intercept: beta[2],
        stderr: [cov[0][0].sqrt(), cov[1][1].sqrt(), cov[2][2].sqrt()],
        means,
        residuals,
    })
}

type M3 = [[f64; 3]; 3];

fn gram(x: &[[f64; 3]]) -> M3 {
    let mut g = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            g[i][j] = kahan_sum(x.iter().map(|r| r[i] * r[j]));
        }
    }
    g
}

fn mul3(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

/// Inverse by Gauss-Jordan with partial pivoting; near-singular input is an error.
fn invert3(a: &M3) -> Result<M3> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut m = *a;
    let mut inv = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        if m[p][c].abs() <= 1e-13 * scale {
            return Err(Error::Numerical("rank-deficient regression design".into()));
        }
        m.swap(c, p);
        inv.swap(c, p);
        let d = m[c][c];
        for j in 0..3 {
            m[c][j] /= d;
            inv[c][j] /= d;
        }
        for i in 0..3 {
            if i != c {
                let f = m[i][c];
                for j in 0..3 {
                    m[i][j] -= f * m[c][j];
                    inv[i][j] -= f * inv[c][j];
                }
            }
        }
    }
    Ok(inv)
}

/// Deterministic schedule and variance profile for one `z`.
#[derive(Debug, Clone)]
pub struct FieldContext {
    pub schedule: RegimeSchedule,
    pub profile: VarianceProfile,
}

impl FieldContext {
    pub fn new(z: f64, n: usize, kappa: f64, delta: f64, spec: &EnsembleSpec) -> Result<Self> {
        let schedule = build_schedule(z, n, kappa, delta)?;
        let profile = build_profile(&schedule, spec)?;
        Ok(Self { schedule, profile })
    }
}

/// `Psi_t = psi_{n_t}` for `t = 1..=T_z` at one `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeChangedField {
    pub z: f64,
    /// `psi[t-1] = Psi_t`.
    pub psi: Vec<f64>,
}

impl TimeChangedField {
    /// `Psi_t`; past `T_z` the time change is capped at `n`, so this is `psi_n`.
    pub fn at(&self, t: usize) -> Option<f64> {
        if t == 0 { None } else { self.psi.get(t - 1).or(self.psi.last()).copied() }
    }
}

/// Run the conjugated recursion and read `psi` at the time-change points.
pub fn time_changed_field(prep: &Prepared, v: f64, ctx: &FieldContext) -> Result<TimeChangedField> {
    let tc = &ctx.profile.time_change;
    let mut ks = tc.clone();
    ks.dedup();
    let traj = conjugated_trajectory_prepared(prep, v, ctx.schedule.z, &ctx.schedule, &Checkpoints::At(ks))?;
    if let Some(k) = traj.flagged_at {
        return Err(Error::Numerical(format!("recursion vanished at step {k}")));
    }
    let psi = tc
        .iter()
        .map(|&k| {
            let i = traj.checkpoints.binary_search_by_key(&k, |c| c.k).expect("checkpoint recorded");
            traj.checkpoints[i].psi
        })
        .collect();
    Ok(TimeChangedField { z: ctx.schedule.z, psi })
}

/// Time set `[1, t_q^-] U [t_q^+, T]` with `t_q^+- = floor((2/3) tau +- q log tau)`, `tau = log n`.
pub fn barrier_times(n: usize, q: f64, t_z: usize) -> Vec<usize> {
    let (lo, hi) = excluded_window(n, q);
    (1..=t_z).filter(|&t| (t as f64) <= lo || (t as f64) >= hi).collect()
}

/// `(t_q^-, t_q^+)` as reals (they may be negative or exceed `T_z`).
pub fn excluded_window(n: usize, q: f64) -> (f64, f64) {
    let tau = (n as f64).ln();
    ((2.0 / 3.0 * tau - q * tau.ln()).floor(), (2.0 / 3.0 * tau + q * tau.ln()).floor())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierReport {
    #[serde(rename = "C")]
    pub c: f64,
    pub q: f64,
    pub crossing_fraction: f64,
    pub replica_crossed: Vec<bool>,
    /// `(z, t, max over replicas of Psi_t - barrier_t)` over the barrier time set.
    pub worst_excess: Vec<(f64, usize, f64)>,
    /// Smallest `C` without crossings on the barrier time set (`-inf` when the set is empty).
    pub min_c_zero_crossings: f64,
    /// Same over every `t in [1, T_z]`.
    pub min_c_zero_crossings_all_t: f64,
    pub barrier_time_count: usize,
}

/// Crossings of `Psi_t > sqrt(v) t + C log log n` over the barrier time set.
/// `fields[r][j]` is replica `r` at net point `j`.
pub fn barrier_scan(fields: &[Vec<TimeChangedField>], n: usize, v: f64, c: f64, q: f64) -> Result<BarrierReport> {
    if fields.is_empty() {
        return Err(Error::Precondition("no replicas".into()));
    }
    let width = fields[0].len();
    if fields.iter().any(|f| f.len() != width) || width == 0 {
        return Err(Error::Precondition("every replica needs the same nonempty set of net points".into()));
    }
    let llog = (n as f64).ln().ln();
    let sv = v.sqrt();
    let mut worst: Vec<(f64, usize, f64)> = Vec::new();
    let mut crossed = vec![false; fields.len()];
    let (mut need, mut need_all) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut count = 0;
    for j in 0..width {
        let z = fields[0][j].z;
        let t_z = fields[0][j].psi.len();
        if fields.iter().any(|f| f[j].z != z || f[j].psi.len() != t_z) {
            return Err(Error::Precondition(format!("time-change checkpoints differ across replicas at z = {z}")));
        }
        let times = barrier_times(n, q, t_z);
        count += times.len();
        for t in 1..=t_z {
            let in_set = times.binary_search(&t).is_ok();
            let mut w = f64::NEG_INFINITY;
            for (r, f) in fields.iter().enumerate() {
                let psi = f[j].psi[t - 1];
                if !psi.is_finite() {
                    return Err(Error::Precondition(format!("Psi_{t} missing at z = {z}")));
                }
                let excess = psi - sv * t as f64 - c * llog;
                let needed = (psi - sv * t as f64) / llog;
                need_all = need_all.max(needed);
                if in_set {
                    crossed[r] |= excess > 0.0;
                    need = need.max(needed);
                    w = w.max(excess);
                }
            }
            if in_set {
                worst.push((z, t, w));
            }
        }
    }
    let frac = crossed.iter().filter(|&&x| x).count() as f64 / fields.len() as f64;
    Ok(BarrierReport {
        c,
        q,
        crossing_fraction: frac,
        replica_crossed: crossed,
        worst_excess: worst,
        min_c_zero_crossings: need,
        min_c_zero_crossings_all_t: need_all,
        barrier_time_count: count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedField {
    pub value: f64,
    /// Steps `start + 1 ..= end` enter the product.
    pub start: usize,
    pub end: usize,
}

/// Field restarted at `e_1` at `n_{t_eps}` and run to `n_{tau_eps}` with the
/// hyperbolic transfer matrices divided by `alpha`.
pub fn truncated_field(coeffs: &JacobiCoefficients, ctx: &FieldContext, epsilon: f64) -> Result<TruncatedField> {
    let prep = Prepared::new(coeffs);
    truncated_field_prepared(&prep, ctx, epsilon)
}

/// Window `(n_{t_eps}, n_{tau_eps}]` of [`truncated_field`].
pub fn truncation_window(ctx: &FieldContext, epsilon: f64) -> Result<(usize, usize)> {
    if !(epsilon >= 0.0) {
        return Err(Error::param("epsilon", format!("must be nonnegative, got {epsilon}")));
    }
    let n = ctx.schedule.n;
    let tau = (n as f64).ln();
    let shift = (epsilon * tau.ln()).floor();
    let (t_lo, t_hi) = (shift, tau - shift);
    let (start, end) = (ctx.profile.time_change_at(t_lo), ctx.profile.time_change_at(t_hi));
    if !(t_lo < t_hi) || start >= end {
        return Err(Error::param("epsilon", format!("empty window: t = {t_lo} .. {t_hi} gives steps {start} .. {end}")));
    }
    Ok((start, end))
}

pub fn truncated_field_prepared(prep: &Prepared, ctx: &FieldContext, epsilon: f64) -> Result<TruncatedField> {
    let (start, end) = truncation_window(ctx, epsilon)?;
    let s = &ctx.schedule;
    let mut drift = Kahan::new();
    let mut last = None;
    let vanished = y_sweep(prep, s, start, [1.0, 0.0], end, |k, st, _| {
        if s.regime(k) == Regime::Hyperbolic {
            drift.add(alpha_of(z_k(s.z, s.n, k)).ln());
        }
        if k == end {
            last = Some(st.log_norm());
        }
        true
    });
    if let Some(k) = vanished {
        return Err(Error::Numerical(format!("truncated recursion vanished at step {k}")));
    }
    Ok(TruncatedField { value: last.expect("window nonempty") - drift.value(), start, end })
}

/// Frequency of `|<e_1, X_n>| <= delta^{5/6} |X_m|`, `m = floor((1 - delta) n)`.
pub fn anticoncentration_check(coeff_set: &[JacobiCoefficients], z: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::param("delta", format!("must lie in (0, 1], got {delta}")));
    }
    if coeff_set.is_empty() {
        return Ok(f64::NAN);
    }
    let hits: Vec<bool> = coeff_set
        .par_iter()
        .map(|c| -> Result<bool> {
            let m = ((1.0 - delta) * c.n as f64).floor() as usize;
            let st = scaled_states(c, z, &[m, c.n])?;
            let (log_first, _) = st[1].first();
            Ok(log_first <= (5.0 / 6.0) * delta.ln() + st[0].log_norm)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub s: usize,
    pub t: usize,
    pub covariance: f64,
    pub replicas: usize,
    pub warning: Option<String>,
}

/// Empirical `Cov(Psi_s, Psi_t)` across replicas at one `z`.
pub fn field_covariance(fields: &[TimeChangedField], n: usize, q: f64, s: usize, t: usize) -> Result<CovarianceEstimate> {
    let (lo, hi) = excluded_window(n, q);
    for u in [s, t] {
        if u == 0 || ((u as f64) > lo && (u as f64) < hi) {
            return Err(Error::Precondition(format!("time {u} lies in the excluded window ({lo}, {hi})")));
        }
    }
    let pick = |u: usize| -> Result<Vec<f64>> {
        fields
            .iter()
            .map(|f| f.at(u).ok_or_else(|| Error::Precondition(format!("Psi_{u} not recorded"))))
            .collect()
    };
    let (xs, ys) = (pick(s)?, pick(t)?);
    let warning = (fields.len() < 100).then(|| format!("only {} replicas; estimate is noisy", fields.len()));
    Ok(CovarianceEstimate { s, t, covariance: covariance(&xs, &ys), replicas: fields.len(), warning })
}

/// `D_n(z) = sum_{k <= k0} log alpha_{k,z}`.
pub fn mean_profile(z: f64, n: usize) -> f64 {
    let k0 = crate::regimes::critical_time(z, n);
    let mut acc = Kahan::new();
    for k in 1..=k0 {
        acc.add(alpha_of(z_k(z, n, k)).ln());
    }
    acc.value()
}

/// `D_n(z) - n z^2/4 + (1/4) log n`.
pub fn mean_profile_offset(z: f64, n: usize) -> f64 {
    mean_profile(z, n) - n as f64 * z * z / 4.0 + 0.25 * (n as f64).ln()
}
