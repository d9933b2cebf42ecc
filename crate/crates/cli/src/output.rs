//! Output sinks. CSV files start with `#` lines carrying the resolved config.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Config;
use crate::CliError;

pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn render(&self, cfg: &Config) -> Result<Vec<u8>, CliError> {
        let mut buf = Vec::new();
        writeln!(buf, "# jacobimax {} {}", cfg.command.name(), env!("CARGO_PKG_VERSION"))?;
        writeln!(buf, "# master_seed = {}", cfg.seed)?;
        writeln!(buf, "# config = {}", serde_json::to_string(cfg).map_err(|e| CliError::Failure(e.to_string()))?)?;
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
        drop(w);
        Ok(buf)
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Failure(format!("csv: {e}"))
}

pub fn fmt(x: f64) -> String {
    format!("{x:?}")
}

/// `report.csv` + `"time_change"` -> `report.time_change.csv`.
pub fn sibling(path: &Path, tag: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}

fn emit(bytes: &[u8], path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
        }
    }
    Ok(())
}

pub fn write_table(cfg: &Config, table: &Table, path: Option<&Path>) -> Result<(), CliError> {
    emit(&table.render(cfg)?, path)
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    master_seed: u64,
    config: &'a Config,
    report: &'a T,
}

pub fn write_json<T: Serialize>(cfg: &Config, report: &T, path: Option<&Path>) -> Result<(), CliError> {
    let w = Wrapped { master_seed: cfg.seed, config: cfg, report };
    let mut bytes = serde_json::to_vec_pretty(&w).map_err(|e| CliError::Failure(e.to_string()))?;
    bytes.push(b'\n');
    emit(&bytes, path)
}
