//! File output helpers. Every file carries the register digest and seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<PathBuf, CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    write(path, s.as_bytes())
}

/// Comment lines placed above a CSV header.
pub fn csv_preamble(digest: &str, seed: Option<u64>) -> String {
    let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    format!("# spinscope {}\n# register_digest={digest}\n# seed={seed}\n", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub register_path: String,
    pub register_digest: String,
    pub protocol: serde_json::Value,
    pub grid_points: usize,
    pub grid_start_s: f64,
    pub grid_stop_s: f64,
    pub include_decay: bool,
    pub seed: Option<u64>,
    pub noise: serde_json::Value,
    pub prng: Option<String>,
    pub threads: usize,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}
