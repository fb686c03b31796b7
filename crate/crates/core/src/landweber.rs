//! Bouligand–Landweber iteration with discrepancy-principle stopping.
//!
//! ```text
//! u_{n+1} = u_n + w_n · G_{u_n}(y^δ − F(u_n))
//! ```
//!
//! stopped at the first `n` with `‖y^δ − F(u_n)‖_M ≤ τδ`. All norms are the
//! discrete L² norms `‖v‖_M = sqrt(vᵀMv)`.

use serde::{Deserialize, Serialize};

use crate::bouligand::{apply_subderivative, build_linearized};
use crate::error::{Error, Result};
use crate::fem::m_norm;
use crate::forward::{solve_forward_with, ForwardOptions, ForwardProblem};
use crate::mesh::{GridFunction, Role};
use crate::scalar::Scalar;

/// Step sizes `w_n`.
#[derive(Clone, Debug, PartialEq)]
pub enum StepRule<T> {
    Constant(T),
    /// Step `n` uses entry `n`; the last entry repeats once the list runs out.
    Schedule(Vec<T>),
}

impl<T: Scalar> StepRule<T> {
    pub fn step(&self, n: usize) -> T {
        match self {
            StepRule::Constant(w) => *w,
            StepRule::Schedule(list) => list[n.min(list.len() - 1)],
        }
    }
}

#[derive(Clone, Debug)]
pub struct LandweberConfig<T> {
    /// Tangential cone constant `μ ∈ [0, 1)`.
    pub mu: T,
    /// Discrepancy factor `τ > 1`.
    pub tau: T,
    /// Radius of the ball around the exact solution; informational, also the
    /// amplitude of the biased starting point in the experiments.
    pub rho: T,
    /// Estimate `L̄` of the subderivative norm bound.
    pub lbar: T,
    pub steps: StepRule<T>,
    /// Lower step bound `λ`.
    pub step_min: T,
    /// Upper step bound `Λ`.
    pub step_max: T,
    pub max_iterations: usize,
    /// Noise level `δ ≥ 0`.
    pub delta: T,
    pub forward: ForwardOptions<T>,
    /// Start each forward solve from the previous state instead of zero.
    pub warm_start: bool,
    pub store_iterates: bool,
}

impl<T: Scalar> Default for LandweberConfig<T> {
    fn default() -> Self {
        Self::constant_step(T::lit(0.1), T::lit(1.4), T::lit(5.0), T::lit(0.05))
    }
}

impl<T: Scalar> LandweberConfig<T> {
    /// Constant step `w = λ = Λ = (2 − 2μ)/L̄²`, `N_max = 5000`, `δ = 0`.
    pub fn constant_step(mu: T, tau: T, rho: T, lbar: T) -> Self {
        let two = T::lit(2.0);
        let w = (two - two * mu) / (lbar * lbar);
        LandweberConfig {
            mu,
            tau,
            rho,
            lbar,
            steps: StepRule::Constant(w),
            step_min: w,
            step_max: w,
            max_iterations: 5000,
            delta: T::zero(),
            forward: ForwardOptions::default(),
            warm_start: false,
            store_iterates: false,
        }
    }

    pub fn with_delta(mut self, delta: T) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.tau > T::one()) {
            return bad(format!("tau must exceed 1, got {}", self.tau));
        }
        if !(self.mu >= T::zero() && self.mu < T::one()) {
            return bad(format!("mu must lie in [0, 1), got {}", self.mu));
        }
        if !(self.lbar > T::zero()) {
            return bad(format!("lbar must be positive, got {}", self.lbar));
        }
        if !(self.rho > T::zero()) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.step_min > T::zero() && self.step_min <= self.step_max) {
            return bad(format!(
                "step bounds must satisfy 0 < lambda <= Lambda, got [{}, {}]",
                self.step_min, self.step_max
            ));
        }
        if self.max_iterations == 0 {
            return bad("max iterations must be at least 1".into());
        }
        if !(self.delta >= T::zero()) || !self.delta.is_finite() {
            return bad(format!("noise level must be >= 0, got {}", self.delta));
        }
        let steps: &[T] = match &self.steps {
            StepRule::Constant(w) => std::slice::from_ref(w),
            StepRule::Schedule(list) if list.is_empty() => return bad("empty step schedule".into()),
            StepRule::Schedule(list) => list,
        };
        if let Some(w) = steps
            .iter()
            .find(|&&w| !(w >= self.step_min && w <= self.step_max))
        {
            return bad(format!(
                "step {w} outside [{}, {}]",
                self.step_min, self.step_max
            ));
        }
        self.forward.linear.validate()
    }
}

/// Left-hand sides of the two step-size conditions and whether each holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParameterCheck {
    /// `2(μ + 1)/τ − (2 − 2μ − ΛL²)`; must be negative for finite stopping.
    pub choice: f64,
    /// `−1 + μ + 5ΛL²`; must be negative for convergence of the auxiliary sequence.
    pub choice_aux: f64,
    pub choice_satisfied: bool,
    pub choice_aux_satisfied: bool,
}

/// Evaluates the step-size conditions for a norm bound `L`. Violations are
/// logged, never enforced.
pub fn check_parameters<T: Scalar>(cfg: &LandweberConfig<T>, norm_bound: T) -> ParameterCheck {
    let (mu, tau, lam, l) = (
        cfg.mu.as_f64(),
        cfg.tau.as_f64(),
        cfg.step_max.as_f64(),
        norm_bound.as_f64(),
    );
    let choice = 2.0 * (mu + 1.0) / tau - (2.0 - 2.0 * mu - lam * l * l);
    let choice_aux = -1.0 + mu + 5.0 * lam * l * l;
    let check = ParameterCheck {
        choice,
        choice_aux,
        choice_satisfied: choice < 0.0,
        choice_aux_satisfied: choice_aux < 0.0,
    };
    if !check.choice_satisfied {
        log::warn!("stopping-index condition violated: {choice:.6} >= 0");
    }
    if !check.choice_aux_satisfied {
        log::warn!("step-size convergence condition violated: {choice_aux:.6} >= 0");
    }
    check
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Discrepancy,
    MaxIterations,
    ForwardFailure,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Discrepancy => "discrepancy",
            Termination::MaxIterations => "max-iterations",
            Termination::ForwardFailure => "forward-failure",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// History of one Landweber run.
///
/// Entry `n` of `residuals`, `rel_errors` and `ssn_iterations` belongs to the
/// iterate `u_n`. On forward failure at step `n` the histories hold entries
/// `0..n` and `stopping_index` is `n`.
#[derive(Clone, Debug)]
pub struct RunRecord<T> {
    pub residuals: Vec<T>,
    /// Empty when no exact solution was supplied.
    pub rel_errors: Vec<T>,
    pub ssn_iterations: Vec<usize>,
    pub stopping_index: usize,
    pub reason: Termination,
    pub failure: Option<String>,
    pub final_iterate: GridFunction<T>,
    pub iterates: Option<Vec<GridFunction<T>>>,
    pub delta: T,
    pub tau: T,
}

impl<T: Scalar> RunRecord<T> {
    pub fn threshold(&self) -> T {
        self.tau * self.delta
    }

    pub fn total_ssn(&self) -> usize {
        self.ssn_iterations.iter().sum()
    }

    pub fn final_residual(&self) -> Option<T> {
        self.residuals.last().copied()
    }

    pub fn final_rel_error(&self) -> Option<T> {
        self.rel_errors.last().copied()
    }

    /// Mean semi-smooth Newton iterations per forward solve.
    pub fn mean_ssn(&self) -> f64 {
        if self.ssn_iterations.is_empty() {
            0.0
        } else {
            self.total_ssn() as f64 / self.ssn_iterations.len() as f64
        }
    }
}

/// Runs the iteration from `u0` on data `y_data`; when `u_exact` is given the
/// relative error of every iterate is recorded as well.
pub fn run<T: Scalar>(
    problem: &ForwardProblem<T>,
    y_data: &GridFunction<T>,
    cfg: &LandweberConfig<T>,
    u0: &GridFunction<T>,
    u_exact: Option<&GridFunction<T>>,
) -> Result<RunRecord<T>> {
    cfg.validate()?;
    run_capped(problem, y_data, cfg, u0, u_exact, cfg.max_iterations)
}

/// [`run`] with an explicit iteration cap that may be zero (start iterate only).
pub(crate) fn run_capped<T: Scalar>(
    problem: &ForwardProblem<T>,
    y_data: &GridFunction<T>,
    cfg: &LandweberConfig<T>,
    u0: &GridFunction<T>,
    u_exact: Option<&GridFunction<T>>,
    max_iterations: usize,
) -> Result<RunRecord<T>> {
    problem.check_field(y_data)?;
    problem.check_field(u0)?;
    let mass = problem.mass();
    let exact = match u_exact {
        Some(ue) => {
            problem.check_field(ue)?;
            let norm = m_norm(mass, ue)?;
            if norm == T::zero() {
                return Err(Error::ZeroDenominator(
                    "exact solution has zero norm".into(),
                ));
            }
            Some((ue, norm))
        }
        None => None,
    };

    let threshold = cfg.tau * cfg.delta;
    let mut u = u0.clone().with_role(Role::Source);
    let mut warm: Option<GridFunction<T>> = None;
    let mut residuals = Vec::new();
    let mut rel_errors = Vec::new();
    let mut ssn_iterations = Vec::new();
    let mut iterates = cfg.store_iterates.then(Vec::new);
    let mut failure = None;
    let mut n = 0;

    let reason = loop {
        let state = match solve_forward_with(problem, &u, warm.as_ref(), &cfg.forward) {
            Ok(s) => s,
            Err(e) => {
                failure = Some(e.to_string());
                break Termination::ForwardFailure;
            }
        };
        let misfit = y_data.sub(&state.y)?.with_role(Role::Data);
        let residual = m_norm(mass, &misfit)?;
        residuals.push(residual);
        ssn_iterations.push(state.ssn_iterations);
        if let Some((ue, norm)) = exact {
            rel_errors.push(m_norm(mass, &u.sub(ue)?)? / norm);
        }
        if let Some(store) = iterates.as_mut() {
            store.push(u.clone());
        }

        if residual <= threshold {
            break Termination::Discrepancy;
        }
        if n == max_iterations {
            break Termination::MaxIterations;
        }

        let op = build_linearized(problem, &state.y)?;
        let direction = match apply_subderivative(&op, mass, &misfit, &cfg.forward.linear) {
            Ok(d) => d,
            Err(e) => {
                n += 1;
                failure = Some(e.to_string());
                break Termination::ForwardFailure;
            }
        };
        u.axpy(cfg.steps.step(n), &direction)?;
        if cfg.warm_start {
            warm = Some(state.y);
        }
        n += 1;
    };

    if reason == Termination::ForwardFailure {
        log::warn!(
            "Landweber run stopped at step {n}: {}",
            failure.as_deref().unwrap_or("unknown failure")
        );
    }

    Ok(RunRecord {
        residuals,
        rel_errors,
        ssn_iterations,
        stopping_index: n,
        reason,
        failure,
        final_iterate: u,
        iterates,
        delta: cfg.delta,
        tau: cfg.tau,
    })
}

/// `‖u_exact − u‖_M / ‖u_exact‖_M`.
pub fn relative_error<T: Scalar>(
    u: &GridFunction<T>,
    u_exact: &GridFunction<T>,
    mass: &crate::linalg::CsrMatrix<T>,
) -> Result<T> {
    let denom = m_norm(mass, u_exact)?;
    if denom == T::zero() {
        return Err(Error::ZeroDenominator(
            "exact solution has zero norm".into(),
        ));
    }
    Ok(m_norm(mass, &u_exact.sub(u)?)? / denom)
}

/// `‖u_exact − u‖_M / √δ`.
pub fn empirical_rate<T: Scalar>(abs_error: T, delta: T) -> Result<T> {
    if !(delta > T::zero()) {
        return Err(Error::ZeroDenominator(format!(
            "convergence rate needs a positive noise level, got {delta}"
        )));
    }
    Ok(abs_error / delta.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_forward;
    use crate::mesh::interpolate;

    #[test]
    fn parameter_conditions_of_the_standard_setting() {
        let cfg = LandweberConfig::<f64>::default();
        assert!((cfg.step_max - 720.0).abs() < 1e-9);
        let check = check_parameters(&cfg, 0.05);
        assert!((check.choice - 2.2 / 1.4).abs() < 1e-12);
        assert!((check.choice_aux - 8.1).abs() < 1e-12);
        assert!(!check.choice_satisfied && !check.choice_aux_satisfied);
    }

    #[test]
    fn parameter_conditions_satisfied_case() {
        let mut cfg = LandweberConfig::<f64>::constant_step(0.0, 2.0, 1.0, 1.0);
        cfg.step_max = 0.1;
        cfg.step_min = 0.1;
        let check = check_parameters(&cfg, 1.0);
        assert!((check.choice + 0.9).abs() < 1e-12);
        assert!((check.choice_aux + 0.5).abs() < 1e-12);
        assert!(check.choice_satisfied && check.choice_aux_satisfied);

        cfg.tau = 1e12;
        cfg.step_max = 1e-12;
        let limit = check_parameters(&cfg, 1.0);
        assert!((limit.choice + 2.0).abs() < 1e-9);
        assert!((limit.choice_aux + 1.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = LandweberConfig::<f64> {
            tau: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = LandweberConfig::<f64> {
            mu: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = LandweberConfig::<f64> {
            steps: StepRule::Schedule(vec![720.0, 800.0]),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = LandweberConfig::<f64>::default().with_max_iterations(0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn schedule_repeats_last_step() {
        let rule = StepRule::Schedule(vec![1.0, 2.0]);
        assert_eq!(rule.step(0), 1.0);
        assert_eq!(rule.step(1), 2.0);
        assert_eq!(rule.step(7), 2.0);
    }

    #[test]
    fn metrics() {
        let p = ForwardProblem::<f64>::positive_part(9).unwrap();
        let ue = interpolate(&p.mesh(), Role::Source, |x, y| x + y).unwrap();
        assert_eq!(relative_error(&ue, &ue, p.mass()).unwrap(), 0.0);
        let zero = GridFunction::zeros(p.mesh(), Role::Source);
        assert!((relative_error(&zero, &ue, p.mass()).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            relative_error(&ue, &zero, p.mass()),
            Err(Error::ZeroDenominator(_))
        ));
        assert_eq!(empirical_rate(0.3, 0.09).unwrap(), 1.0);
        assert!(empirical_rate(0.3, 0.0).is_err());
    }

    #[test]
    fn discrepancy_met_at_start() {
        let p = ForwardProblem::<f64>::positive_part(9).unwrap();
        let u0 = interpolate(&p.mesh(), Role::Source, |x, y| 10.0 * x * y).unwrap();
        let y0 = solve_forward(&p, &u0, None).unwrap().y;
        let cfg = LandweberConfig::default().with_delta(1e-3);
        let rec = run(&p, &y0, &cfg, &u0, None).unwrap();
        assert_eq!(rec.stopping_index, 0);
        assert_eq!(rec.reason, Termination::Discrepancy);
        assert_eq!(rec.final_iterate.values(), u0.values());
        assert!(rec.rel_errors.is_empty());
    }

    #[test]
    fn noise_free_run_hits_iteration_cap() {
        let p = ForwardProblem::<f64>::positive_part(9).unwrap();
        let ue = interpolate(&p.mesh(), Role::Source, |x: f64, y: f64| {
            50.0 * (x * std::f64::consts::PI).sin() * (2.0 * y * std::f64::consts::PI).sin()
        })
        .unwrap();
        let data = solve_forward(&p, &ue, None)
            .unwrap()
            .y
            .with_role(Role::Data);
        let zero = GridFunction::zeros(p.mesh(), Role::Source);
        let mut cfg = LandweberConfig::default().with_max_iterations(20);
        cfg.store_iterates = true;
        let rec = run(&p, &data, &cfg, &zero, Some(&ue)).unwrap();
        assert_eq!(rec.reason, Termination::MaxIterations);
        assert_eq!(rec.stopping_index, 20);
        assert_eq!(rec.residuals.len(), 21);
        assert_eq!(rec.iterates.as_ref().unwrap().len(), 21);
        assert_eq!(rec.rel_errors[0], 1.0);
        assert!(rec.rel_errors[20] < rec.rel_errors[0]);
        for w in rec.residuals.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn forward_failure_is_recorded() {
        let p = ForwardProblem::<f64>::positive_part(9).unwrap();
        let u0 = interpolate(&p.mesh(), Role::Source, |x, y| 100.0 * (x - y)).unwrap();
        let data = GridFunction::zeros(p.mesh(), Role::Data);
        let mut cfg = LandweberConfig::default().with_delta(1e-9);
        cfg.forward.max_iterations = 1;
        let rec = run(&p, &data, &cfg, &u0, None).unwrap();
        assert_eq!(rec.reason, Termination::ForwardFailure);
        assert_eq!(rec.stopping_index, 0);
        assert!(rec.residuals.is_empty());
        assert!(rec.failure.is_some());
    }
}
