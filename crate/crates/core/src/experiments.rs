//! Manufactured exact solution, seeded measurement noise and the experiment
//! campaigns (noise-free convergence and the noise-level table).
//!
//! Noise is drawn from `ChaCha8Rng::seed_from_u64(seed)` with standard normal
//! samples taken node by node in interior ordering, so a seed fixes the
//! realization on every platform.

use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::m_norm;
use crate::forward::ForwardProblem;
use crate::landweber::{empirical_rate, run, run_capped, LandweberConfig, RunRecord};
use crate::linalg::CsrMatrix;
use crate::mesh::{interpolate, GridFunction, Mesh, Role};
use crate::scalar::Scalar;

/// Closed-form exact state and source.
///
/// The state is `g(x₁) sin(2πx₂)` with `g(x₁) = (x₁−β)²(x₁−1+β)²` on
/// `(β, 1−β]` and zero elsewhere, so it vanishes on a strip of width `2β`
/// where the forward map is not differentiable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactData {
    pub beta: f64,
    /// Amplitude of the smooth bias in the starting point `ū`.
    pub rho: f64,
}

impl Default for ExactData {
    fn default() -> Self {
        ExactData {
            beta: 0.005,
            rho: 5.0,
        }
    }
}

impl ExactData {
    pub fn new(beta: f64, rho: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 0.5) {
            return Err(Error::InvalidInput(format!(
                "beta must lie in (0, 0.5), got {beta}"
            )));
        }
        Ok(ExactData { beta, rho })
    }

    fn in_support<T: Scalar>(&self, x1: T) -> bool {
        let beta = T::lit(self.beta);
        x1 > beta && x1 <= T::one() - beta
    }

    pub fn state<T: Scalar>(&self, x1: T, x2: T) -> T {
        if !self.in_support(x1) {
            return T::zero();
        }
        let beta = T::lit(self.beta);
        let a = x1 - beta;
        let b = x1 - T::one() + beta;
        a * a * b * b * (T::lit(2.0) * T::PI() * x2).sin()
    }

    /// `u† = max(y†, 0) − Δy†`.
    pub fn source<T: Scalar>(&self, x1: T, x2: T) -> T {
        let y = self.state(x1, x2);
        let mut u = y.max(T::zero());
        if self.in_support(x1) {
            let beta = T::lit(self.beta);
            let two = T::lit(2.0);
            let c = two * x1 - T::one();
            let curvature = c * c + two * (x1 - T::one() + beta) * (x1 - beta);
            let pi = T::PI();
            u = u + T::lit(4.0) * pi * pi * y - two * curvature * (two * pi * x2).sin();
        }
        u
    }

    /// `ū = u† − 2ρ sin(πx₁) sin(2πx₂)`; `u† − ū` lies in the range of the
    /// adjoint subderivative at `u†`.
    pub fn biased_start<T: Scalar>(&self, x1: T, x2: T) -> T {
        let pi = T::PI();
        let two = T::lit(2.0);
        self.source(x1, x2) - two * T::lit(self.rho) * (pi * x1).sin() * (two * pi * x2).sin()
    }

    pub fn fields<T: Scalar>(&self, mesh: &Mesh) -> Result<ExactFields<T>> {
        Ok(ExactFields {
            source: interpolate(mesh, Role::Source, |x, y| self.source(x, y))?,
            state: interpolate(mesh, Role::State, |x, y| self.state(x, y))?,
            biased_start: interpolate(mesh, Role::Source, |x, y| self.biased_start(x, y))?,
        })
    }
}

/// Nodal interpolants of the exact source `u†`, state `y†` and start `ū`.
#[derive(Clone, Debug)]
pub struct ExactFields<T> {
    pub source: GridFunction<T>,
    pub state: GridFunction<T>,
    pub biased_start: GridFunction<T>,
}

pub fn exact_fields<T: Scalar>(mesh: &Mesh, exact: &ExactData) -> Result<ExactFields<T>> {
    exact.fields(mesh)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    Zero,
    Source,
}

impl FromStr for Start {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Start::Zero),
            "source" => Ok(Start::Source),
            other => Err(Error::Parse(format!(
                "unknown start `{other}` (zero|source)"
            ))),
        }
    }
}

impl std::fmt::Display for Start {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Start::Zero => "zero",
            Start::Source => "source",
        })
    }
}

impl Start {
    pub fn field<T: Scalar>(&self, fields: &ExactFields<T>) -> GridFunction<T> {
        match self {
            Start::Zero => GridFunction::zeros(fields.source.mesh(), Role::Source),
            Start::Source => fields.biased_start.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Standard deviation of the nodal perturbations.
    Sigma(f64),
    /// Rescale the draw so that `‖y^δ − y‖_M` equals the target.
    Target(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub seed: u64,
    pub mode: NoiseMode,
}

impl NoiseSpec {
    pub fn sigma(seed: u64, sigma: f64) -> Self {
        NoiseSpec {
            seed,
            mode: NoiseMode::Sigma(sigma),
        }
    }

    pub fn target(seed: u64, delta: f64) -> Self {
        NoiseSpec {
            seed,
            mode: NoiseMode::Target(delta),
        }
    }
}

/// `n` i.i.d. standard normal draws from the seeded generator.
pub fn standard_normal_draws(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Perturbs `y` node by node with seeded Gaussian noise and returns the noisy
/// data together with the measured noise level `‖y^δ − y‖_M`.
pub fn add_noise<T: Scalar>(
    y: &GridFunction<T>,
    spec: &NoiseSpec,
    mass: &CsrMatrix<T>,
) -> Result<(GridFunction<T>, T)> {
    let amplitude = match spec.mode {
        NoiseMode::Sigma(s) | NoiseMode::Target(s) => s,
    };
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::InvalidInput(format!(
            "noise amplitude must be finite and >= 0, got {amplitude}"
        )));
    }
    let xi: Vec<T> = standard_normal_draws(spec.seed, y.len())
        .into_iter()
        .map(T::lit)
        .collect();
    let scale = match spec.mode {
        NoiseMode::Sigma(s) => T::lit(s),
        NoiseMode::Target(target) => {
            if target == 0.0 {
                T::zero()
            } else {
                let raw = m_norm(mass, &GridFunction::new(y.mesh(), Role::Data, xi.clone())?)?;
                T::lit(target) / raw
            }
        }
    };
    let noisy: Vec<T> = y
        .values()
        .iter()
        .zip(&xi)
        .map(|(&v, &e)| v + scale * e)
        .collect();
    let data = GridFunction::new(y.mesh(), Role::Data, noisy)?;
    let delta = m_norm(mass, &data.sub(y)?)?;
    Ok((data, delta))
}

/// Noise-free run for a fixed number of iterations, recording `E_n` at every step.
pub fn run_noise_free<T: Scalar>(
    problem: &ForwardProblem<T>,
    exact: &ExactData,
    start: Start,
    iterations: usize,
    base: &LandweberConfig<T>,
) -> Result<RunRecord<T>> {
    let fields = exact.fields::<T>(&problem.mesh())?;
    let mut cfg = base.clone();
    cfg.delta = T::zero();
    cfg.max_iterations = iterations.max(1);
    cfg.validate()?;
    run_capped(
        problem,
        &fields.state.clone().with_role(Role::Data),
        &cfg,
        &start.field(&fields),
        Some(&fields.source),
        iterations,
    )
}

/// One cell of the noise-level table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub delta_target: f64,
    /// Measured noise level `‖y^δ − y†‖_M`.
    pub delta: f64,
    pub seed: u64,
    pub stopping_index: usize,
    pub rel_error: f64,
    pub rate: f64,
    pub ssn_total: usize,
    pub reason: String,
}

pub const TABLE_HEADER: &str = "delta,seed,N,rel_error,rate,ssn_total,reason";

/// A table cell together with its full run history.
#[derive(Clone, Debug)]
pub struct TableCell<T> {
    pub row: TableRow,
    pub record: Option<RunRecord<T>>,
    pub config: LandweberConfig<T>,
}

/// Runs one inversion per `(δ, seed)` pair, noise rescaled to each target.
/// Cells run in parallel over the shared problem; failures are recorded in
/// the `reason` column and the campaign continues.
pub fn run_table<T: Scalar>(
    problem: &ForwardProblem<T>,
    exact: &ExactData,
    deltas: &[f64],
    start: Start,
    seeds: &[u64],
    base: &LandweberConfig<T>,
) -> Result<Vec<TableCell<T>>> {
    if let Some(d) = deltas.iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "noise levels must be positive, got {d}"
        )));
    }
    let fields = exact.fields::<T>(&problem.mesh())?;
    let u0 = start.field(&fields);
    let jobs: Vec<(u64, f64)> = seeds
        .iter()
        .flat_map(|&s| deltas.iter().map(move |&d| (s, d)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(seed, target)| table_cell(problem, &fields, &u0, seed, target, base))
        .collect();
    Ok(cells)
}

fn table_cell<T: Scalar>(
    problem: &ForwardProblem<T>,
    fields: &ExactFields<T>,
    u0: &GridFunction<T>,
    seed: u64,
    target: f64,
    base: &LandweberConfig<T>,
) -> TableCell<T> {
    let failed = |reason: String, delta: f64| TableCell {
        row: TableRow {
            delta_target: target,
            delta,
            seed,
            stopping_index: 0,
            rel_error: f64::NAN,
            rate: f64::NAN,
            ssn_total: 0,
            reason,
        },
        record: None,
        config: base.clone(),
    };
    let (data, delta) = match add_noise(
        &fields.state,
        &NoiseSpec::target(seed, target),
        problem.mass(),
    ) {
        Ok(x) => x,
        Err(e) => return failed(format!("error: {e}"), f64::NAN),
    };
    let cfg = base.clone().with_delta(delta);
    let record = match run(problem, &data, &cfg, u0, Some(&fields.source)) {
        Ok(r) => r,
        Err(e) => return failed(format!("error: {e}"), delta.as_f64()),
    };
    let rel_error = record.final_rel_error().map_or(f64::NAN, Scalar::as_f64);
    let abs_error = m_norm(
        problem.mass(),
        &fields.source.sub(&record.final_iterate).expect("same mesh"),
    )
    .map_or(f64::NAN, Scalar::as_f64);
    let rate = empirical_rate(abs_error, delta.as_f64()).unwrap_or(f64::NAN);
    TableCell {
        row: TableRow {
            delta_target: target,
            delta: delta.as_f64(),
            seed,
            stopping_index: record.stopping_index,
            rel_error,
            rate,
            ssn_total: record.total_ssn(),
            reason: record.reason.to_string(),
        },
        record: Some(record),
        config: cfg,
    }
}

pub fn write_table<W: Write>(rows: &[TableRow], mut w: W) -> Result<()> {
    writeln!(w, "{TABLE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:.16e},{},{},{:.16e},{:.16e},{},{}",
            r.delta, r.seed, r.stopping_index, r.rel_error, r.rate, r.ssn_total, r.reason
        )?;
    }
    Ok(())
}

/// Reads a table written by [`write_table`]; `delta_target` is not stored and
/// is set to the measured `delta`.
pub fn read_table<R: BufRead>(r: R) -> Result<Vec<TableRow>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty table".into()))??;
    if header.trim() != TABLE_HEADER {
        return Err(Error::Parse(format!("unexpected table header `{header}`")));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim().splitn(7, ',').collect();
        let bad = || Error::Parse(format!("bad table line `{line}`"));
        if f.len() != 7 {
            return Err(bad());
        }
        let delta: f64 = f[0].parse().map_err(|_| bad())?;
        rows.push(TableRow {
            delta_target: delta,
            delta,
            seed: f[1].parse().map_err(|_| bad())?,
            stopping_index: f[2].parse().map_err(|_| bad())?,
            rel_error: f[3].parse().map_err(|_| bad())?,
            rate: f[4].parse().map_err(|_| bad())?,
            ssn_total: f[5].parse().map_err(|_| bad())?,
            reason: f[6].to_string(),
        });
    }
    Ok(rows)
}
