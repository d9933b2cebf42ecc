//! TOML configuration: parsing, flag overrides and validation.

use std::path::{Path, PathBuf};

use jacobimax_core::extremes::{uniform_net, NetSpec};
use jacobimax_core::regimes::build_schedule;
use jacobimax_core::{EnsembleSpec, Error as CoreError, GenericFamily};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// `n = 64` or `n = [512, 2048]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// `"chebyshev"` (default) or `"uniform"`.
    pub kind: Option<String>,
    /// Maximum Chebyshev degree; `0` means the full degree `n`.
    pub cap: Option<usize>,
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierConfig {
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub q: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub r: Option<f64>,
    pub delta_exponent: Option<f64>,
    pub anticoncentration_delta: Option<f64>,
    pub tail_delta: Option<f64>,
    pub s: Option<usize>,
    pub t: Option<usize>,
    pub q: Option<f64>,
}

/// Raw file contents; every key optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub timing: Option<bool>,
    /// `"gbe"` (default), `"uniform"` or `"zero"`.
    pub ensemble: Option<String>,
    pub beta: Option<f64>,
    pub v: Option<f64>,
    pub truncate: Option<bool>,
    pub truncation_exponent: Option<f64>,
    pub n: Option<OneOrMany>,
    pub z: Option<Vec<f64>>,
    pub replicas: Option<u64>,
    pub eta: Option<f64>,
    pub kappa: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub stride: Option<usize>,
    pub net: Option<NetConfig>,
    pub barrier: Option<BarrierConfig>,
    pub diagnose: Option<DiagnoseConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Sample,
    Eval,
    Trajectory,
    Profile,
    Verify,
    Extremes,
    Barrier,
    Diagnose,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Eval => "eval",
            Command::Trajectory => "trajectory",
            Command::Profile => "profile",
            Command::Verify => "verify",
            Command::Extremes => "extremes",
            Command::Barrier => "barrier",
            Command::Diagnose => "diagnose",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnoseParams {
    pub r: f64,
    pub delta_exponent: f64,
    pub anticoncentration_delta: f64,
    pub tail_delta: f64,
    pub s: usize,
    pub t: usize,
    pub q: f64,
}

/// Fully resolved settings; embedded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub command: Command,
    pub seed: u64,
    pub threads: Option<usize>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub timing: bool,
    pub ensemble: EnsembleSpec,
    pub ns: Vec<usize>,
    /// Empty means "use the net".
    pub z: Vec<f64>,
    pub replicas: u64,
    pub eta: f64,
    pub kappa: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub stride: Option<usize>,
    pub net: NetSpec,
    pub barrier_c: f64,
    pub barrier_q: f64,
    pub diagnose: DiagnoseParams,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

fn bad(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}`: {reason}"))
}

fn core_to_config(e: CoreError) -> CliError {
    match e {
        CoreError::Parameter { name, reason } => bad(name, reason),
        other => CliError::Config(other.to_string()),
    }
}

pub fn read_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<FileConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
}

pub fn resolve(command: Command, file: FileConfig, over: Overrides) -> Result<Config, CliError> {
    if let Some(c) = &file.command {
        if c != command.name() {
            return Err(bad("command", format!("file is for `{c}` but `{}` was requested", command.name())));
        }
    }
    let ensemble = resolve_ensemble(&file)?;
    let ns = match file.n.clone() {
        Some(OneOrMany::One(n)) => vec![n],
        Some(OneOrMany::Many(v)) => v,
        None if command == Command::Verify => vec![256],
        None => return Err(bad("n", "missing")),
    };
    if ns.is_empty() || ns.contains(&0) {
        return Err(bad("n", "every n must be at least 1"));
    }
    let eta = file.eta.unwrap_or(0.1);
    if !(eta > 0.0 && eta < 1.0) {
        return Err(bad("eta", format!("bulk condition requires 0 < eta < 1, got {eta}")));
    }
    let z = file.z.clone().unwrap_or_default();
    for &x in &z {
        if !(x.abs() >= eta && x.abs() <= 2.0 - eta) {
            return Err(bad("z", format!("{x} lies outside eta <= |z| <= 2 - eta (eta = {eta})")));
        }
    }
    let kappa = file.kappa.unwrap_or(4.0);
    if !(kappa >= 1.0) {
        return Err(bad("kappa", format!("must be >= 1, got {kappa}")));
    }
    let delta = file.delta.unwrap_or(eta * eta / 10.0);
    if !(delta > 0.0 && delta < 1.0) {
        return Err(bad("delta", format!("must lie in (0, 1), got {delta}")));
    }
    let epsilon = file.epsilon.unwrap_or(0.5);
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(bad("epsilon", format!("must be nonnegative, got {epsilon}")));
    }
    if file.stride == Some(0) {
        return Err(bad("stride", "must be at least 1"));
    }
    let default_net = match command {
        Command::Barrier => NetConfig { kind: Some("uniform".into()), cap: None, count: Some(64) },
        _ => NetConfig::default(),
    };
    let net = resolve_net(file.net.clone().unwrap_or(default_net))?;
    let barrier = file.barrier.clone().unwrap_or_default();
    let barrier_c = barrier.c.unwrap_or(10.0);
    let barrier_q = barrier.q.unwrap_or(8.0);
    if !barrier_c.is_finite() {
        return Err(bad("barrier.C", "must be finite"));
    }
    if !(barrier_q >= 0.0 && barrier_q.is_finite()) {
        return Err(bad("barrier.q", format!("must be nonnegative, got {barrier_q}")));
    }
    let d = file.diagnose.clone().unwrap_or_default();
    let diagnose = DiagnoseParams {
        r: d.r.unwrap_or(1.0),
        delta_exponent: d.delta_exponent.unwrap_or(0.25),
        anticoncentration_delta: d.anticoncentration_delta.unwrap_or(0.05),
        tail_delta: d.tail_delta.unwrap_or(0.01),
        s: d.s.unwrap_or(5),
        t: d.t.unwrap_or(10),
        q: d.q.unwrap_or(0.5),
    };
    if !(diagnose.anticoncentration_delta > 0.0 && diagnose.anticoncentration_delta <= 1.0) {
        return Err(bad("diagnose.anticoncentration_delta", "must lie in (0, 1]"));
    }
    if !(0.0..1.0).contains(&diagnose.tail_delta) {
        return Err(bad("diagnose.tail_delta", "must lie in [0, 1)"));
    }
    let threads = over.threads.or(file.threads);
    if threads == Some(0) {
        return Err(bad("threads", "must be at least 1"));
    }
    let cfg = Config {
        command,
        seed: over.seed.or(file.seed).unwrap_or(0),
        threads,
        out: over.out.or(file.out.clone()),
        timing: file.timing.unwrap_or(false),
        ensemble,
        ns,
        z,
        replicas: file.replicas.unwrap_or(1),
        eta,
        kappa,
        delta,
        epsilon,
        stride: file.stride,
        net,
        barrier_c,
        barrier_q,
        diagnose,
    };
    check_command(&cfg)?;
    Ok(cfg)
}

fn resolve_ensemble(file: &FileConfig) -> Result<EnsembleSpec, CliError> {
    let name = file.ensemble.as_deref().unwrap_or("gbe");
    let mut spec = match name {
        "gbe" => {
            if file.v.is_some() {
                return Err(bad("v", "only used by generic ensembles; set `beta` instead"));
            }
            EnsembleSpec::gaussian_beta(file.beta.unwrap_or(2.0))
        }
        other => {
            let family: GenericFamily = other.parse().map_err(|_| bad("ensemble", format!("unknown ensemble `{other}` (gbe, uniform, zero)")))?;
            if file.beta.is_some() {
                return Err(bad("beta", "only used by `gbe`; set `v` instead"));
            }
            let v = match family {
                GenericFamily::Zero => file.v.unwrap_or(1.0),
                _ => file.v.ok_or_else(|| bad("v", "required for generic ensembles"))?,
            };
            EnsembleSpec::generic(v, family)
        }
    };
    if file.truncate.unwrap_or(false) {
        spec = spec.with_truncation(file.truncation_exponent.unwrap_or(spec.truncation_exponent));
    } else if let Some(p) = file.truncation_exponent {
        spec.truncation_exponent = p;
    }
    spec.validate().map_err(core_to_config)?;
    Ok(spec)
}

fn resolve_net(net: NetConfig) -> Result<NetSpec, CliError> {
    match net.kind.as_deref().unwrap_or("chebyshev") {
        "chebyshev" => {
            if net.count.is_some() {
                return Err(bad("net.count", "only used by uniform nets"));
            }
            let cap = match net.cap {
                None => Some(jacobimax_core::extremes::DEFAULT_NET_DEGREE),
                Some(0) => None,
                Some(c) => Some(c),
            };
            Ok(NetSpec::Chebyshev { cap })
        }
        "uniform" => {
            if net.cap.is_some() {
                return Err(bad("net.cap", "only used by chebyshev nets"));
            }
            match net.count {
                Some(c) if c > 0 => Ok(NetSpec::Uniform { count: c }),
                _ => Err(bad("net.count", "uniform nets need count >= 1")),
            }
        }
        other => Err(bad("net.kind", format!("unknown net `{other}` (chebyshev, uniform)"))),
    }
}

/// Points used by schedule-based commands.
pub fn schedule_points(cfg: &Config) -> Result<Vec<f64>, CliError> {
    if !cfg.z.is_empty() {
        return Ok(cfg.z.clone());
    }
    match cfg.command {
        Command::Barrier => match cfg.net {
            NetSpec::Uniform { count } => Ok(uniform_net(count, cfg.eta).map_err(core_to_config)?.points),
            NetSpec::Chebyshev { .. } => Ok(cfg.net.build(cfg.ns[0], cfg.eta).map_err(core_to_config)?.points),
        },
        _ => Ok(vec![1.0]),
    }
}

fn single(cfg: &Config, key: &str, len: usize) -> Result<(), CliError> {
    if len != 1 {
        return Err(bad(key, format!("`{}` takes exactly one value, got {len}", cfg.command.name())));
    }
    Ok(())
}

fn check_command(cfg: &Config) -> Result<(), CliError> {
    use Command::*;
    match cfg.command {
        Trajectory | Profile => {
            single(cfg, "n", cfg.ns.len())?;
            single(cfg, "z", cfg.z.len())?;
        }
        Barrier | Diagnose => single(cfg, "n", cfg.ns.len())?,
        _ => {}
    }
    if matches!(cfg.command, Trajectory | Profile | Barrier | Diagnose) {
        for &n in &cfg.ns {
            for z in schedule_points(cfg)? {
                build_schedule(z, n, cfg.kappa, cfg.delta).map_err(|e| match e {
                    CoreError::Parameter { name, reason } => bad(name, format!("at z = {z}, n = {n}: {reason}")),
                    other => CliError::Config(format!("at z = {z}, n = {n}: {other}")),
                })?;
            }
        }
    }
    Ok(())
}
