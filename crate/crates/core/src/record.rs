//! On-disk form of a [`RunRecord`]: a CSV history `n,residual_M,rel_error,ssn_iters`
//! and a JSON sidecar with configuration, noise level, stopping index and
//! termination reason. Floats are written with 17 significant digits so a
//! re-read reproduces `f64` histories bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landweber::{LandweberConfig, RunRecord, StepRule, Termination};
use crate::mesh::Mesh;
use crate::scalar::Scalar;

pub const HISTORY_HEADER: &str = "n,residual_M,rel_error,ssn_iters";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub mu: f64,
    pub tau: f64,
    pub rho: f64,
    pub lbar: f64,
    pub step_min: f64,
    pub step_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_schedule: Option<Vec<f64>>,
    pub max_iterations: usize,
    pub warm_start: bool,
    pub forward_tolerance: f64,
    pub linear_tolerance: f64,
}

impl ConfigSummary {
    pub fn new<T: Scalar>(cfg: &LandweberConfig<T>) -> Self {
        let (constant_step, step_schedule) = match &cfg.steps {
            StepRule::Constant(w) => (Some(w.as_f64()), None),
            StepRule::Schedule(list) => (None, Some(list.iter().map(|w| w.as_f64()).collect())),
        };
        ConfigSummary {
            mu: cfg.mu.as_f64(),
            tau: cfg.tau.as_f64(),
            rho: cfg.rho.as_f64(),
            lbar: cfg.lbar.as_f64(),
            step_min: cfg.step_min.as_f64(),
            step_max: cfg.step_max.as_f64(),
            constant_step,
            step_schedule,
            max_iterations: cfg.max_iterations,
            warm_start: cfg.warm_start,
            forward_tolerance: cfg.forward.tolerance.as_f64(),
            linear_tolerance: cfg.forward.linear.tolerance.as_f64(),
        }
    }
}

/// JSON sidecar of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub nodes_per_side: usize,
    pub config: ConfigSummary,
    pub delta: f64,
    pub threshold: f64,
    pub stopping_index: usize,
    pub reason: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub total_ssn: usize,
    pub final_residual: Option<f64>,
    pub final_rel_error: Option<f64>,
}

impl RunSummary {
    pub fn new<T: Scalar>(record: &RunRecord<T>, cfg: &LandweberConfig<T>, mesh: &Mesh) -> Self {
        RunSummary {
            nodes_per_side: mesh.nodes_per_side(),
            config: ConfigSummary::new(cfg),
            delta: record.delta.as_f64(),
            threshold: record.threshold().as_f64(),
            stopping_index: record.stopping_index,
            reason: record.reason,
            failure: record.failure.clone(),
            total_ssn: record.total_ssn(),
            final_residual: record.final_residual().map(Scalar::as_f64),
            final_rel_error: record.final_rel_error().map(Scalar::as_f64),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub n: usize,
    pub residual: f64,
    pub rel_error: Option<f64>,
    pub ssn_iters: usize,
}

impl<T: Scalar> RunRecord<T> {
    pub fn history(&self) -> Vec<HistoryRow> {
        (0..self.residuals.len())
            .map(|n| HistoryRow {
                n,
                residual: self.residuals[n].as_f64(),
                rel_error: self.rel_errors.get(n).map(|e| e.as_f64()),
                ssn_iters: self.ssn_iterations[n],
            })
            .collect()
    }

    /// Writes the history CSV; `rel_error` is left empty without an exact solution.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{HISTORY_HEADER}")?;
        for row in self.history() {
            match row.rel_error {
                Some(e) => writeln!(
                    w,
                    "{},{:.16e},{:.16e},{}",
                    row.n, row.residual, e, row.ssn_iters
                )?,
                None => writeln!(w, "{},{:.16e},,{}", row.n, row.residual, row.ssn_iters)?,
            }
        }
        Ok(())
    }
}

/// A run re-read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredRun {
    pub history: Vec<HistoryRow>,
    pub summary: RunSummary,
}

impl StoredRun {
    pub fn read<C: Read, J: Read>(csv: C, json: J) -> Result<Self> {
        Ok(StoredRun {
            history: read_history(BufReader::new(csv))?,
            summary: serde_json::from_reader(json)?,
        })
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        Self::read(File::open(csv_path)?, File::open(sidecar_path(csv_path))?)
    }

    /// Re-checks the stopping rule from the stored data alone: for a discrepancy
    /// stop, `residual[N] ≤ τδ < residual[n]` for all `n < N`; for an iteration
    /// cap, every residual exceeds `τδ`.
    pub fn check_discrepancy(&self) -> std::result::Result<(), String> {
        let s = &self.summary;
        let expected = s.config.tau * s.delta;
        if (expected - s.threshold).abs() > 1e-6 * expected.abs() {
            return Err(format!(
                "stored threshold {} differs from tau*delta = {expected}",
                s.threshold
            ));
        }
        let threshold = s.threshold;
        for (i, row) in self.history.iter().enumerate() {
            if row.n != i {
                return Err(format!("history row {i} is labelled n = {}", row.n));
            }
        }
        let n_stop = s.stopping_index;
        match s.reason {
            Termination::Discrepancy => {
                let last = self
                    .history
                    .get(n_stop)
                    .ok_or_else(|| format!("no history entry for N = {n_stop}"))?;
                if self.history.len() != n_stop + 1 {
                    return Err("history extends beyond the stopping index".into());
                }
                if !(last.residual <= threshold) {
                    return Err(format!(
                        "residual[{n_stop}] = {} exceeds tau*delta = {threshold}",
                        last.residual
                    ));
                }
                if let Some(row) = self.history[..n_stop]
                    .iter()
                    .find(|r| !(r.residual > threshold))
                {
                    return Err(format!(
                        "residual[{}] = {} already below tau*delta = {threshold}",
                        row.n, row.residual
                    ));
                }
                Ok(())
            }
            Termination::MaxIterations => {
                if self.history.len() != n_stop + 1 {
                    return Err("history length does not match the stopping index".into());
                }
                match self.history.iter().find(|r| !(r.residual > threshold)) {
                    Some(row) => Err(format!(
                        "run hit the iteration cap although residual[{}] = {} <= {threshold}",
                        row.n, row.residual
                    )),
                    None => Ok(()),
                }
            }
            Termination::ForwardFailure => {
                match self.history.iter().find(|r| !(r.residual > threshold)) {
                    Some(row) => Err(format!(
                        "residual[{}] below threshold before failure",
                        row.n
                    )),
                    None => Ok(()),
                }
            }
        }
    }
}

fn read_history<R: BufRead>(r: R) -> Result<Vec<HistoryRow>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty history file".into()))??;
    if header.trim() != HISTORY_HEADER {
        return Err(Error::Parse(format!(
            "unexpected history header `{header}`"
        )));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad =
            |what: &str| Error::Parse(format!("history line {}: bad {what} in `{line}`", k + 2));
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 4 {
            return Err(bad("field count"));
        }
        rows.push(HistoryRow {
            n: fields[0].parse().map_err(|_| bad("n"))?,
            residual: fields[1].parse().map_err(|_| bad("residual"))?,
            rel_error: if fields[2].is_empty() {
                None
            } else {
                Some(fields[2].parse().map_err(|_| bad("rel_error"))?)
            },
            ssn_iters: fields[3].parse().map_err(|_| bad("ssn_iters"))?,
        });
    }
    Ok(rows)
}

/// JSON sidecar path belonging to a history CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the history CSV to `csv_path` and its JSON sidecar next to it.
pub fn write_run<T: Scalar>(
    csv_path: &Path,
    record: &RunRecord<T>,
    cfg: &LandweberConfig<T>,
    mesh: &Mesh,
) -> Result<RunSummary> {
    let mut csv = BufWriter::new(File::create(csv_path)?);
    record.write_csv(&mut csv)?;
    csv.flush()?;
    let summary = RunSummary::new(record, cfg, mesh);
    let mut json = BufWriter::new(File::create(sidecar_path(csv_path))?);
    serde_json::to_writer_pretty(&mut json, &summary)?;
    writeln!(json)?;
    json.flush()?;
    Ok(summary)
}
