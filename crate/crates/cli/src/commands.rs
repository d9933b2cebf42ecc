//! One function per subcommand.

use std::path::Path;

use jacobimax_core::ensemble::sample;
use jacobimax_core::extremes::{
    anticoncentration_check, barrier_scan, field_covariance, fit_leading, run_experiment,
    time_changed_field, truncated_field_prepared, ExperimentPlan, FieldContext, TimeChangedField,
};
use jacobimax_core::oracle::{default_tolerance, dense_det, eigen_tridiag, log_potential};
use jacobimax_core::recursion::{eval_zs, log_abs_charpoly, raw_charpoly, Prepared};
use jacobimax_core::regimes::{conjugated_trajectory, deterministic_tail_product, good_block_flags, Checkpoints};
use jacobimax_core::variance::build_profile;
use jacobimax_core::{Error as CoreError, JacobiCoefficients, SeedSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{schedule_points, Command, Config};
use crate::output::{fmt, sibling, write_json, write_table, Table};
use crate::CliError;

pub fn run(cfg: &Config) -> Result<(), CliError> {
    match cfg.command {
        Command::Sample => sample_cmd(cfg),
        Command::Eval => eval_cmd(cfg),
        Command::Trajectory => trajectory_cmd(cfg),
        Command::Profile => profile_cmd(cfg),
        Command::Verify => verify_cmd(cfg),
        Command::Extremes => extremes_cmd(cfg),
        Command::Barrier => barrier_cmd(cfg),
        Command::Diagnose => diagnose_cmd(cfg),
    }
}

fn out(cfg: &Config) -> Option<&Path> {
    cfg.out.as_deref()
}

fn units(cfg: &Config) -> Vec<(usize, u64)> {
    cfg.ns.iter().flat_map(|&n| (0..cfg.replicas).map(move |r| (n, r))).collect()
}

fn draw(cfg: &Config, n: usize, r: u64) -> Result<JacobiCoefficients, CoreError> {
    sample(&cfg.ensemble, n, SeedSpec::for_replica(cfg.seed, n, r))
}

fn sample_cmd(cfg: &Config) -> Result<(), CliError> {
    let draws: Vec<_> = units(cfg).par_iter().map(|&(n, r)| draw(cfg, n, r).map(|c| (n, r, c))).collect::<Result<_, _>>()?;
    let mut t = Table::new(&["n", "stream_id", "k", "b", "a2"]);
    for (n, r, c) in &draws {
        for k in 1..=*n {
            let a2 = if k < *n { fmt(c.a_sq(k)) } else { String::new() };
            t.push(vec![n.to_string(), r.to_string(), k.to_string(), fmt(c.b(k)), a2]);
        }
    }
    write_table(cfg, &t, out(cfg))
}

fn eval_cmd(cfg: &Config) -> Result<(), CliError> {
    let rows: Vec<_> = units(cfg)
        .par_iter()
        .map(|&(n, r)| -> Result<_, CliError> {
            let c = draw(cfg, n, r)?;
            let zs = if cfg.z.is_empty() { cfg.net.build(n, cfg.eta)?.points } else { cfg.z.clone() };
            Ok((n, r, eval_zs(&c, &zs)))
        })
        .collect::<Result<_, _>>()?;
    let mut t = Table::new(&["n", "stream_id", "z", "log_abs_p", "sign", "centered", "flagged"]);
    for (n, r, res) in &rows {
        for p in res {
            t.push(vec![n.to_string(), r.to_string(), fmt(p.z), fmt(p.log_abs_p), fmt(p.sign), fmt(p.centered), p.flagged.to_string()]);
        }
    }
    write_table(cfg, &t, out(cfg))
}

fn trajectory_cmd(cfg: &Config) -> Result<(), CliError> {
    let (n, z) = (cfg.ns[0], cfg.z[0]);
    let schedule = jacobimax_core::regimes::build_schedule(z, n, cfg.kappa, cfg.delta)?;
    let c = draw(cfg, n, 0)?;
    let stride = cfg.stride.unwrap_or((n / 1000).max(1));
    let traj = conjugated_trajectory(&c, z, &schedule, &Checkpoints::Stride(stride))?;
    let mut t = Table::new(&["k", "psi", "W", "zeta", "log_norm_Y", "M"]);
    for p in &traj.checkpoints {
        t.push(vec![p.k.to_string(), fmt(p.psi), fmt(p.w), fmt(p.zeta), fmt(p.log_norm_y), fmt(p.m)]);
    }
    write_table(cfg, &t, out(cfg))?;
    match traj.flagged_at {
        Some(k) => Err(CliError::Failure(format!("recursion vanished at step {k}"))),
        None => Ok(()),
    }
}

fn profile_cmd(cfg: &Config) -> Result<(), CliError> {
    let (n, z) = (cfg.ns[0], cfg.z[0]);
    let schedule = jacobimax_core::regimes::build_schedule(z, n, cfg.kappa, cfg.delta)?;
    let p = build_profile(&schedule, &cfg.ensemble)?;
    let mut t = Table::new(&["k", "sigma2", "Sigma2", "hat_sigma2", "hat_Sigma2"]);
    for k in 0..n {
        t.push(vec![(k + 1).to_string(), fmt(p.sigma2[k]), fmt(p.sigma2_cum[k]), fmt(p.hat_sigma2[k]), fmt(p.hat_sigma2_cum[k])]);
    }
    let mut tc = Table::new(&["t", "n_t"]);
    for (i, &k) in p.time_change.iter().enumerate() {
        tc.push(vec![(i + 1).to_string(), k.to_string()]);
    }
    write_table(cfg, &t, out(cfg))?;
    match out(cfg) {
        Some(path) => write_table(cfg, &tc, Some(&sibling(path, "time_change", "csv"))),
        None => {
            println!();
            write_table(cfg, &tc, None)
        }
    }
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    max_error: f64,
    tolerance: f64,
    cases: usize,
    passed: bool,
}

impl Check {
    fn new(name: &'static str, errors: &[f64], tolerance: f64) -> Self {
        let max_error = errors.iter().fold(0.0f64, |m, &e| if e.is_nan() { f64::NAN } else { m.max(e) });
        Self { name, max_error, tolerance, cases: errors.len(), passed: max_error <= tolerance }
    }
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    checks: Vec<Check>,
    passed: bool,
}

fn hermite(n: usize, x: f64) -> f64 {
    match n {
        3 => x * x * x - 3.0 * x,
        4 => x.powi(4) - 6.0 * x * x + 3.0,
        _ => unreachable!(),
    }
}

fn verify_cmd(cfg: &Config) -> Result<(), CliError> {
    let zs = [-1.7, -0.9, 0.3, 1.1, 1.6];
    let mut det = Vec::new();
    for n in 2..=12 {
        for r in 0..10 {
            let c = draw(cfg, n, r)?;
            for &z in &zs {
                let d = dense_det(&c, z, n)?;
                det.push((raw_charpoly(&c, z, n) - d).abs() / d.abs().max(1.0));
            }
        }
    }
    let mut herm = Vec::new();
    for n in [3usize, 4] {
        let c = JacobiCoefficients::zero_noise(n);
        for i in 0..20 {
            let z = -1.9 + 0.2 * i as f64;
            let x = z * (n as f64).sqrt();
            let h = hermite(n, x);
            herm.push((raw_charpoly(&c, z, n) - h).abs() / h.abs().max(1.0));
        }
    }
    let mut scaled = Vec::new();
    for n in 2..=12 {
        let c = draw(cfg, n, 0)?;
        for &z in &zs {
            let raw = raw_charpoly(&c, z, n).abs().ln() - 0.5 * n as f64 * (n as f64).ln();
            scaled.push((log_abs_charpoly(&c, z).log_abs_p - raw).abs());
        }
    }
    let n = cfg.ns[0];
    let mut eig = Vec::new();
    for r in 0..3 {
        let c = draw(cfg, n, r)?;
        let spec = eigen_tridiag(&c, default_tolerance(&c))?;
        for i in 0..10 {
            let z = -1.8 + 0.37 * i as f64;
            let lp = log_potential(&spec, z);
            eig.push((log_abs_charpoly(&c, z).log_abs_p - lp).abs() / (lp.abs() + 1.0));
        }
    }
    let checks = vec![
        Check::new("determinant identity", &det, 1e-9),
        Check::new("hermite polynomials", &herm, 1e-12),
        Check::new("scaled vs raw recursion", &scaled, 1e-10),
        Check::new("eigenvalues vs polynomial", &eig, 1e-8),
    ];
    let passed = checks.iter().all(|c| c.passed);
    for c in &checks {
        eprintln!("{} {:<28} max_error={:.3e} tol={:.0e}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.max_error, c.tolerance);
    }
    write_json(cfg, &VerifyReport { checks, passed }, out(cfg))?;
    if passed { Ok(()) } else { Err(CliError::Verification("at least one identity exceeded its tolerance".into())) }
}

fn extremes_cmd(cfg: &Config) -> Result<(), CliError> {
    let plan = ExperimentPlan {
        ensemble: cfg.ensemble,
        ns: cfg.ns.clone(),
        replicas: cfg.replicas,
        net: cfg.net,
        eta: cfg.eta,
        master_seed: cfg.seed,
        timing: cfg.timing,
    };
    let res = run_experiment(&plan)?;
    for f in &res.failures {
        eprintln!("replica failed: n={} stream_id={}: {}", f.n, f.stream_id, f.error);
    }
    if !res.failures.is_empty() {
        eprintln!("{} of {} replicas failed", res.failures.len(), res.failures.len() + res.records.len());
    }
    if res.records.is_empty() && !res.failures.is_empty() {
        return Err(CliError::Failure("every replica failed".into()));
    }
    let mut t = Table::new(&["n", "beta", "stream_id", "max_centered", "argmax_z", "runtime_ms"]);
    for r in &res.records {
        t.push(vec![r.n.to_string(), fmt(r.beta), r.stream_id.to_string(), fmt(r.max_centered), fmt(r.argmax_z), r.runtime_ms.to_string()]);
    }
    write_table(cfg, &t, out(cfg))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        regression: Option<jacobimax_core::extremes::RegressionFit>,
        note: Option<String>,
        failures: &'a [jacobimax_core::extremes::ReplicaFailure],
    }
    let (regression, note) = match fit_leading(&res.records) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(format!("regression skipped: {e}"))),
    };
    if let Some(f) = &regression {
        eprintln!("slope_logn={:.4} (se {:.4})  slope_loglogn={:.4} (se {:.4})", f.slope_logn, f.stderr[0], f.slope_loglogn, f.stderr[1]);
    }
    let summary = Summary { regression, note, failures: &res.failures };
    match out(cfg) {
        Some(p) => write_json(cfg, &summary, Some(&sibling(p, "regression", "json"))),
        None => write_json(cfg, &summary, None),
    }
}

fn contexts(cfg: &Config, n: usize) -> Result<Vec<FieldContext>, CliError> {
    schedule_points(cfg)?
        .par_iter()
        .map(|&z| FieldContext::new(z, n, cfg.kappa, cfg.delta, &cfg.ensemble).map_err(CliError::from))
        .collect()
}

fn fields_for(cfg: &Config, n: usize, ctxs: &[FieldContext]) -> Result<Vec<Vec<TimeChangedField>>, CliError> {
    (0..cfg.replicas)
        .into_par_iter()
        .map(|r| -> Result<_, CliError> {
            let c = draw(cfg, n, r)?;
            let prep = Prepared::new(&c);
            ctxs.iter().map(|ctx| time_changed_field(&prep, c.v, ctx).map_err(CliError::from)).collect()
        })
        .collect()
}

fn barrier_cmd(cfg: &Config) -> Result<(), CliError> {
    let n = cfg.ns[0];
    let ctxs = contexts(cfg, n)?;
    let fields = fields_for(cfg, n, &ctxs)?;
    let report = barrier_scan(&fields, n, cfg.ensemble.noise_variance(), cfg.barrier_c, cfg.barrier_q)?;
    eprintln!("crossing_fraction={} min_C={:.4}", report.crossing_fraction, report.min_c_zero_crossings);
    write_json(cfg, &report, out(cfg))
}

#[derive(Debug, Serialize)]
struct PointDiagnostics {
    z: f64,
    good_elliptic_fraction: f64,
    good_hyperbolic_fraction: f64,
    anticoncentration_frequency: f64,
    covariance: Option<jacobimax_core::extremes::CovarianceEstimate>,
    covariance_error: Option<String>,
    truncated_field_mean: Option<f64>,
    truncated_field_error: Option<String>,
    tail_product: Option<jacobimax_core::regimes::TailProduct>,
    tail_product_error: Option<String>,
}

fn diagnose_cmd(cfg: &Config) -> Result<(), CliError> {
    let n = cfg.ns[0];
    let d = cfg.diagnose;
    let ctxs = contexts(cfg, n)?;
    let coeffs: Vec<JacobiCoefficients> = (0..cfg.replicas).into_par_iter().map(|r| draw(cfg, n, r)).collect::<Result<_, _>>()?;
    let mut report = Vec::new();
    for ctx in &ctxs {
        let z = ctx.schedule.z;
        let flags: Vec<_> = coeffs
            .par_iter()
            .map(|c| -> Result<_, CliError> {
                let traj = conjugated_trajectory(c, z, &ctx.schedule, &Checkpoints::Stride(1))?;
                Ok(good_block_flags(&traj, &ctx.schedule, d.r, d.delta_exponent)?)
            })
            .collect::<Result<_, _>>()?;
        let frac = |pick: &dyn Fn(&jacobimax_core::regimes::BlockFlags) -> &Vec<(usize, bool)>| {
            let all: Vec<bool> = flags.iter().flat_map(|f| pick(f).iter().map(|b| b.1)).collect();
            if all.is_empty() { f64::NAN } else { all.iter().filter(|&&g| g).count() as f64 / all.len() as f64 }
        };
        let fields: Vec<TimeChangedField> = coeffs
            .par_iter()
            .map(|c| time_changed_field(&Prepared::new(c), c.v, ctx))
            .collect::<Result<_, _>>()?;
        let cov = field_covariance(&fields, n, d.q, d.s, d.t);
        if let Ok(Some(w)) = cov.as_ref().map(|c| c.warning.clone()) {
            eprintln!("z={z}: {w}");
        }
        let truncated: Result<Vec<f64>, CoreError> =
            coeffs.par_iter().map(|c| truncated_field_prepared(&Prepared::new(c), ctx, cfg.epsilon).map(|t| t.value)).collect();
        let tail = deterministic_tail_product(z, n, d.tail_delta);
        report.push(PointDiagnostics {
            z,
            good_elliptic_fraction: frac(&|f| &f.elliptic),
            good_hyperbolic_fraction: frac(&|f| &f.hyperbolic),
            anticoncentration_frequency: anticoncentration_check(&coeffs, z, d.anticoncentration_delta)?,
            covariance_error: cov.as_ref().err().map(|e| e.to_string()),
            covariance: cov.ok(),
            truncated_field_error: truncated.as_ref().err().map(|e| e.to_string()),
            truncated_field_mean: truncated.ok().map(|v| v.iter().sum::<f64>() / v.len().max(1) as f64),
            tail_product_error: tail.as_ref().err().map(|e| e.to_string()),
            tail_product: tail.ok(),
        });
    }
    write_json(cfg, &report, out(cfg))
}
