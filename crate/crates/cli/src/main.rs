//! `jacobimax <subcommand> --config <path> [--seed N] [--threads N] [--out <path>]`

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Command, FileConfig, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Failure(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) => 2,
            CliError::Failure(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<jacobimax_core::Error> for CliError {
    fn from(e: jacobimax_core::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "jacobimax", version, about = "Extremes of log-characteristic polynomials of random Jacobi matrices")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// TOML config file (optional for `verify`)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overrides the file
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path (default: stdout)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Sub {
    /// Emit sampled coefficients
    Sample,
    /// Centered field over a net or a z list
    Eval,
    /// psi / W / zeta checkpoints of the conjugated recursion
    Trajectory,
    /// Variance profile and time change tables
    Profile,
    /// Determinant, Hermite and eigenvalue cross-checks
    Verify,
    /// Monte Carlo maxima and regression on log n
    Extremes,
    /// Barrier crossing diagnostic
    Barrier,
    /// Good blocks, anticoncentration, covariance and tail product
    Diagnose,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Sample => Command::Sample,
            Sub::Eval => Command::Eval,
            Sub::Trajectory => Command::Trajectory,
            Sub::Profile => Command::Profile,
            Sub::Verify => Command::Verify,
            Sub::Extremes => Command::Extremes,
            Sub::Barrier => Command::Barrier,
            Sub::Diagnose => Command::Diagnose,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let command = Command::from(cli.command);
    let file = match &cli.config {
        Some(p) => config::read_file(p)?,
        None if command == Command::Verify => FileConfig::default(),
        None => return Err(CliError::Config("`--config` is required".into())),
    };
    let cfg = config::resolve(command, file, Overrides { seed: cli.seed, threads: cli.threads, out: cli.out })?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Failure(format!("thread pool: {e}")))?;
    }
    commands::run(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("jacobimax: {e}");
            ExitCode::from(e.code())
        }
    }
}
