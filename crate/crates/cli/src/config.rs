//! JSON configuration file. Keys are the long flag names; any flag given on
//! the command line takes precedence over the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub n: Option<usize>,
    pub out: Option<PathBuf>,
    pub source: Option<String>,
    pub start: Option<String>,
    pub iters: Option<usize>,
    pub delta_target: Option<f64>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    pub mu: Option<f64>,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
    pub lbar: Option<f64>,
    pub max_iter: Option<usize>,
    pub deltas: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub suite: Option<String>,
    pub beta: Option<f64>,
    pub warm_start: Option<bool>,
    pub trials: Option<usize>,
    pub pairs: Option<usize>,
    pub radius: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing config file {}", path.display()))
    }
}

/// Flag value, else file value, else `None`.
pub fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

pub fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    match pick(flag, file) {
        Some(v) => Ok(v),
        None => bail!("--{name} is required (on the command line or in the config file)"),
    }
}
