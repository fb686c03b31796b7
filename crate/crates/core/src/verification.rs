//! Empirical checks of the structural assumptions behind the iteration:
//! tangential-cone ratios, sign-mismatch measures, M-self-adjointness and the
//! norm bound of the subderivative, and the enumeration oracle sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bouligand::{apply_subderivative, build_linearized};
use crate::error::{check_dim, Error, Result};
use crate::fem::{m_inner, m_norm};
use crate::forward::{brute_force_forward, solve_forward, ForwardProblem};
use crate::linalg::{
    max_abs_diff, solve_spd, DiagonalMatrix, LinearOperator, Preconditioner, SolveOptions,
};
use crate::mesh::{interpolate, GridFunction, Mesh, Role};
use crate::scalar::Scalar;

/// Oracle discrepancies above this bound count as failures.
pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// Linearization error of one pair `(u, û)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TCCEstimate {
    /// `‖F(û) − F(u) − G_u(û − u)‖_M / ‖F(û) − F(u)‖_M`.
    pub ratio: f64,
    /// Lumped area of the nodes where the two states disagree in sign.
    pub mismatch: f64,
    /// `‖û − u‖_M`.
    pub radius: f64,
}

pub fn tcc_ratio<T: Scalar>(
    problem: &ForwardProblem<T>,
    u: &GridFunction<T>,
    u_hat: &GridFunction<T>,
) -> Result<TCCEstimate> {
    let mass = problem.mass();
    let step = u_hat.sub(u)?;
    let radius = m_norm(mass, &step)?;
    let y = solve_forward(problem, u, None)?.y;
    let y_hat = solve_forward(problem, u_hat, None)?.y;
    let dy = y_hat.sub(&y)?;
    let denom = m_norm(mass, &dy)?;
    if radius == T::zero() || denom <= T::lit(1e-14) * radius {
        return Err(Error::DegeneratePair(format!(
            "state difference {denom:e} is negligible against source difference {radius:e}"
        )));
    }
    let op = build_linearized(problem, &y)?;
    let linear = apply_subderivative(&op, mass, &step, &problem.options().linear)?;
    let remainder = m_norm(mass, &dy.sub(&linear)?)?;
    Ok(TCCEstimate {
        ratio: (remainder / denom).as_f64(),
        mismatch: mismatch_measure(problem.lumped(), &y, &y_hat)?.as_f64(),
        radius: radius.as_f64(),
    })
}

/// `Σ D_ii` over nodes with `y_i ≤ 0 < ŷ_i` or `ŷ_i ≤ 0 < y_i`.
pub fn mismatch_measure<T: Scalar>(
    lumped: &DiagonalMatrix<T>,
    y: &GridFunction<T>,
    y_hat: &GridFunction<T>,
) -> Result<T> {
    y.check_same_mesh(y_hat)?;
    check_dim(lumped.dim(), y.len())?;
    let zero = T::zero();
    Ok(lumped
        .entries()
        .iter()
        .zip(y.values().iter().zip(y_hat.values()))
        .filter(|(_, (&a, &b))| (a <= zero && b > zero) || (a > zero && b <= zero))
        .fold(zero, |acc, (&d, _)| acc + d))
}

/// How random directions are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    /// Independent `U(−1, 1)` value at every node.
    UniformNodal,
    /// `Σ c_kl sin(kπx₁) sin(lπx₂)` over `1 ≤ k, l ≤ 4` with `c_kl ~ N(0, 1)/(k² + l²)`.
    SmoothBump,
}

impl std::fmt::Display for Perturbation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Perturbation::UniformNodal => "uniform-nodal",
            Perturbation::SmoothBump => "smooth-bump",
        })
    }
}

/// Random direction of the given kind (not normalized).
pub fn random_direction<T: Scalar, R: Rng>(
    mesh: &Mesh,
    kind: Perturbation,
    rng: &mut R,
) -> GridFunction<T> {
    match kind {
        Perturbation::UniformNodal => {
            let values = (0..mesh.interior_count())
                .map(|_| T::lit(rng.random_range(-1.0..1.0)))
                .collect();
            GridFunction::new(*mesh, Role::Source, values).expect("length matches mesh")
        }
        Perturbation::SmoothBump => {
            let mut coeffs = [[0.0f64; 4]; 4];
            for (k, row) in coeffs.iter_mut().enumerate() {
                for (l, c) in row.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(rng);
                    *c = z / (((k + 1) * (k + 1) + (l + 1) * (l + 1)) as f64);
                }
            }
            interpolate(mesh, Role::Source, |x: T, y: T| {
                let (x, y) = (x.as_f64(), y.as_f64());
                let pi = std::f64::consts::PI;
                let mut v = 0.0;
                for (k, row) in coeffs.iter().enumerate() {
                    for (l, c) in row.iter().enumerate() {
                        v += c * ((k + 1) as f64 * pi * x).sin() * ((l + 1) as f64 * pi * y).sin();
                    }
                }
                T::lit(v)
            })
            .expect("finite smooth field")
        }
    }
}

fn scaled_to<T: Scalar>(
    mut v: GridFunction<T>,
    mass: &crate::linalg::CsrMatrix<T>,
    norm: T,
) -> Result<GridFunction<T>> {
    let current = m_norm(mass, &v)?;
    if current > T::zero() {
        let s = norm / current;
        v.values_mut().iter_mut().for_each(|x| *x = *x * s);
    }
    Ok(v)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TccSample {
    pub perturbation: Perturbation,
    #[serde(flatten)]
    pub estimate: TCCEstimate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TccSurvey {
    pub ball_radius: f64,
    pub seed: u64,
    pub samples: Vec<TccSample>,
    pub max_ratio: f64,
    /// Smallest `C` with `μ̂ ≤ C·m̂^{1/p}` over samples with `m̂ > 0`, for each
    /// exponent `p` in `(p, C)` pairs.
    pub mismatch_fits: Vec<(f64, f64)>,
    /// Pairs whose states differed too little to estimate a ratio.
    pub degenerate: usize,
}

/// Samples pairs `u = c + a`, `û = c + b` in the M-ball of radius `ball_radius`
/// around `center`, alternating the two perturbation kinds. Both offsets have
/// M-norm `ball_radius·s` with `s ~ U(0, 1]`.
pub fn tcc_survey<T: Scalar>(
    problem: &ForwardProblem<T>,
    center: &GridFunction<T>,
    ball_radius: f64,
    pairs: usize,
    seed: u64,
) -> Result<TccSurvey> {
    let mesh = problem.mesh();
    let mass = problem.mass();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(pairs);
    let mut degenerate = 0;
    for k in 0..pairs {
        let kind = if k % 2 == 0 {
            Perturbation::UniformNodal
        } else {
            Perturbation::SmoothBump
        };
        let offset = |rng: &mut ChaCha8Rng| -> Result<GridFunction<T>> {
            let s: f64 = 1.0 - rng.random::<f64>();
            let dir = random_direction(&mesh, kind, rng);
            let mut p = scaled_to(dir, mass, T::lit(ball_radius * s))?;
            p.axpy(T::one(), center)?;
            Ok(p)
        };
        let u = offset(&mut rng)?;
        let u_hat = offset(&mut rng)?;
        match tcc_ratio(problem, &u, &u_hat) {
            Ok(estimate) => samples.push(TccSample {
                perturbation: kind,
                estimate,
            }),
            Err(Error::DegeneratePair(_)) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    let max_ratio = samples.iter().map(|s| s.estimate.ratio).fold(0.0, f64::max);
    let mismatch_fits = [4.0, 6.0, 10.0]
        .iter()
        .map(|&p| {
            let c = samples
                .iter()
                .filter(|s| s.estimate.mismatch > 0.0)
                .map(|s| s.estimate.ratio / s.estimate.mismatch.powf(1.0 / p))
                .fold(0.0, f64::max);
            (p, c)
        })
        .collect();
    Ok(TccSurvey {
        ball_radius,
        seed,
        samples,
        max_ratio,
        mismatch_fits,
        degenerate,
    })
}

/// Source whose forward state is (up to solver error) the given state:
/// `u = M⁻¹(A y + D f(y))`.
pub fn source_for_state<T: Scalar>(
    problem: &ForwardProblem<T>,
    y: &GridFunction<T>,
) -> Result<GridFunction<T>> {
    problem.check_field(y)?;
    let f = problem.nonlinearity();
    let mut rhs = problem.stiffness().apply(y.values())?;
    for ((r, &d), &yi) in rhs
        .iter_mut()
        .zip(problem.lumped().entries())
        .zip(y.values())
    {
        *r = *r + d * f.value(yi);
    }
    let opts = SolveOptions {
        preconditioner: Preconditioner::Diagonal,
        ..problem.options().linear
    };
    let u = solve_spd(problem.mass(), &rhs, &opts)?;
    GridFunction::new(problem.mesh(), Role::Source, u.x)
}

/// Pairs `(u, û)` whose states share a strict sign pattern with no zero entries.
///
/// A smooth random state is pushed away from zero by 5% of its maximum, then
/// perturbed nodewise by at most half its own magnitude; sources are recovered
/// with [`source_for_state`].
pub fn sign_preserving_pairs<T: Scalar>(
    problem: &ForwardProblem<T>,
    count: usize,
    seed: u64,
) -> Result<Vec<(GridFunction<T>, GridFunction<T>)>> {
    let mesh = problem.mesh();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut y: GridFunction<T> = random_direction(&mesh, Perturbation::SmoothBump, &mut rng);
        let peak = y.values().iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let floor = T::lit(0.05) * peak;
        for v in y.values_mut() {
            *v = *v + if *v >= T::zero() { floor } else { -floor };
        }
        let mut y_hat = y.clone();
        for v in y_hat.values_mut() {
            *v = *v * (T::one() + T::lit(rng.random_range(-0.5..0.5)));
        }
        let y = y.with_role(Role::State);
        let y_hat = y_hat.with_role(Role::State);
        out.push((
            source_for_state(problem, &y)?,
            source_for_state(problem, &y_hat)?,
        ));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleReport {
    pub nodes_per_side: usize,
    pub trials: usize,
    pub seed: u64,
    pub max_diff: f64,
    /// Per-trial max-norm discrepancy between Newton and enumeration.
    pub diffs: Vec<f64>,
    /// Trials above [`ORACLE_TOLERANCE`].
    pub failures: usize,
}

/// Compares semi-smooth Newton against exhaustive enumeration on seeded
/// sources `u_i ~ U(−1, 1)` for the `max` nonlinearity.
pub fn oracle_sweep(nodes_per_side: usize, trials: usize, seed: u64) -> Result<OracleReport> {
    let problem = ForwardProblem::<f64>::positive_part(nodes_per_side)?;
    let mesh = problem.mesh();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diffs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let u: GridFunction<f64> = random_direction(&mesh, Perturbation::UniformNodal, &mut rng);
        let newton = solve_forward(&problem, &u, None)?;
        let oracle = brute_force_forward(&problem, &u)?;
        diffs.push(max_abs_diff(newton.y.values(), oracle.y.values()));
    }
    let max_diff = diffs.iter().copied().fold(0.0, f64::max);
    Ok(OracleReport {
        nodes_per_side,
        trials,
        seed,
        max_diff,
        failures: diffs.iter().filter(|&&d| d > ORACLE_TOLERANCE).count(),
        diffs,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdjointReport {
    pub nodes_per_side: usize,
    pub trials: usize,
    pub seed: u64,
    /// `|hᵀM G(w) − wᵀM G(h)| / (‖h‖_M ‖w‖_M)` per trial.
    pub asymmetry: Vec<f64>,
    pub max_asymmetry: f64,
    /// Largest observed `‖G(w)‖_M / ‖w‖_M`.
    pub max_rayleigh: f64,
}

/// Random base source with a state of mixed sign: a smooth field of amplitude
/// 100 plus nodal noise of amplitude 10.
pub fn random_source<T: Scalar, R: Rng>(mesh: &Mesh, rng: &mut R) -> GridFunction<T> {
    let mut u: GridFunction<T> = random_direction(mesh, Perturbation::SmoothBump, rng);
    u.values_mut()
        .iter_mut()
        .for_each(|v| *v = *v * T::lit(100.0));
    let noise: GridFunction<T> = random_direction(mesh, Perturbation::UniformNodal, rng);
    u.axpy(T::lit(10.0), &noise).expect("same mesh");
    u
}

/// Probes M-self-adjointness and the norm of the subderivative on random
/// `(h, w, u)` triples.
pub fn adjoint_check<T: Scalar>(
    problem: &ForwardProblem<T>,
    trials: usize,
    seed: u64,
) -> Result<AdjointReport> {
    let mesh = problem.mesh();
    let mass = problem.mass();
    let opts = problem.options().linear;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut asymmetry = Vec::with_capacity(trials);
    let mut max_rayleigh: f64 = 0.0;
    for k in 0..trials {
        let u = random_source::<T, _>(&mesh, &mut rng);
        let y = solve_forward(problem, &u, None)?.y;
        let op = build_linearized(problem, &y)?;
        let kind = if k % 2 == 0 {
            Perturbation::UniformNodal
        } else {
            Perturbation::SmoothBump
        };
        let h: GridFunction<T> = random_direction(&mesh, kind, &mut rng);
        let w: GridFunction<T> = random_direction(&mesh, kind, &mut rng);
        let gh = apply_subderivative(&op, mass, &h, &opts)?;
        let gw = apply_subderivative(&op, mass, &w, &opts)?;
        let lhs = m_inner(mass, &h, &gw)?;
        let rhs = m_inner(mass, &w, &gh)?;
        let (nh, nw) = (m_norm(mass, &h)?, m_norm(mass, &w)?);
        asymmetry.push(((lhs - rhs).abs() / (nh * nw)).as_f64());
        max_rayleigh = max_rayleigh
            .max((m_norm(mass, &gh)? / nh).as_f64())
            .max((m_norm(mass, &gw)? / nw).as_f64());
    }
    Ok(AdjointReport {
        nodes_per_side: mesh.nodes_per_side(),
        trials,
        seed,
        max_asymmetry: asymmetry.iter().copied().fold(0.0, f64::max),
        asymmetry,
        max_rayleigh,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mismatch_measure_cases() {
        let p = ForwardProblem::<f64>::positive_part(6).unwrap();
        let mesh = p.mesh();
        let n = mesh.interior_count();
        let y = GridFunction::new(mesh, Role::State, vec![-1.0; n]).unwrap();
        assert_eq!(mismatch_measure(p.lumped(), &y, &y).unwrap(), 0.0);

        let pos = GridFunction::new(mesh, Role::State, vec![1.0; n]).unwrap();
        let all = mismatch_measure(p.lumped(), &y, &pos).unwrap();
        assert!((all - p.lumped().trace()).abs() < 1e-15);
        assert!((all - 16.0 / 25.0).abs() < 1e-14);

        let half: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let half = GridFunction::new(mesh, Role::State, half).unwrap();
        let m = mismatch_measure(p.lumped(), &y, &half).unwrap();
        assert!((m - all / 2.0).abs() < 1e-15);
        assert_eq!(m, mismatch_measure(p.lumped(), &half, &y).unwrap());

        // zero counts as non-positive
        let zero = GridFunction::new(mesh, Role::State, vec![0.0; n]).unwrap();
        assert_eq!(mismatch_measure(p.lumped(), &zero, &y).unwrap(), 0.0);
        assert!((mismatch_measure(p.lumped(), &zero, &pos).unwrap() - all).abs() < 1e-15);
    }

    #[test]
    fn scalar_oracle_sweep() {
        let report = oracle_sweep(3, 100, 1).unwrap();
        assert!(report.max_diff <= 1e-12, "{}", report.max_diff);
        assert_eq!(report.failures, 0);
    }

    #[test]
    fn identical_pair_is_degenerate() {
        let p = ForwardProblem::<f64>::positive_part(5).unwrap();
        let u = GridFunction::zeros(p.mesh(), Role::Source);
        assert!(matches!(
            tcc_ratio(&p, &u, &u),
            Err(Error::DegeneratePair(_))
        ));
    }

    #[test]
    fn source_for_state_inverts_forward_map() {
        let p = ForwardProblem::<f64>::positive_part(17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: GridFunction<f64> =
            random_direction(&p.mesh(), Perturbation::SmoothBump, &mut rng).with_role(Role::State);
        let u = source_for_state(&p, &y).unwrap();
        let back = solve_forward(&p, &u, None).unwrap().y;
        assert!(max_abs_diff(back.values(), y.values()) < 1e-10);
    }
}
