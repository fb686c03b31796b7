//! Discrete forward problem `A y + D f(y) = M u` and its semi-smooth Newton solver.

use crate::error::{check_dim, Error, Result};
use crate::fem::{assemble, Assembly};
use crate::linalg::{
    norm2, solve_dense, CsrMatrix, DiagonalMatrix, LinearOperator, Preconditioner, ShiftedMatrix,
    SolveOptions,
};
use crate::mesh::{GridFunction, Mesh, Role};
use crate::multigrid::solve_on_mesh;
use crate::nonlinearity::PC1Nonlinearity;
use crate::scalar::Scalar;

/// Largest number of selection patterns [`brute_force_forward`] will enumerate.
pub const MAX_ENUMERATED_PATTERNS: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions<T> {
    /// Absolute bound on the Euclidean residual `‖A y + D f(y) − M u‖₂`.
    pub tolerance: T,
    pub max_iterations: usize,
    pub linear: SolveOptions<T>,
}

impl<T: Scalar> Default for ForwardOptions<T> {
    fn default() -> Self {
        ForwardOptions {
            tolerance: T::lit(1e-11),
            max_iterations: 100,
            linear: SolveOptions {
                preconditioner: Preconditioner::Multigrid,
                ..SolveOptions::default()
            },
        }
    }
}

/// Mesh, assembled matrices and nonlinearity of one discrete forward problem.
/// Immutable after construction and shareable across threads.
#[derive(Clone, Debug)]
pub struct ForwardProblem<T> {
    mesh: Mesh,
    assembly: Assembly<T>,
    nonlinearity: PC1Nonlinearity<T>,
    options: ForwardOptions<T>,
}

impl<T: Scalar> ForwardProblem<T> {
    pub fn new(mesh: Mesh, nonlinearity: PC1Nonlinearity<T>) -> Self {
        ForwardProblem {
            mesh,
            assembly: assemble(&mesh),
            nonlinearity,
            options: ForwardOptions::default(),
        }
    }

    /// The model problem `−Δy + max(y, 0) = u` on an `n_h × n_h` grid.
    pub fn positive_part(nodes_per_side: usize) -> Result<Self> {
        Ok(Self::new(
            Mesh::new(nodes_per_side)?,
            PC1Nonlinearity::positive_part(),
        ))
    }

    pub fn with_options(mut self, options: ForwardOptions<T>) -> Self {
        self.options = options;
        self
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn stiffness(&self) -> &CsrMatrix<T> {
        &self.assembly.stiffness
    }

    pub fn mass(&self) -> &CsrMatrix<T> {
        &self.assembly.mass
    }

    pub fn lumped(&self) -> &DiagonalMatrix<T> {
        &self.assembly.lumped
    }

    pub fn nonlinearity(&self) -> &PC1Nonlinearity<T> {
        &self.nonlinearity
    }

    pub fn options(&self) -> &ForwardOptions<T> {
        &self.options
    }

    pub fn dim(&self) -> usize {
        self.mesh.interior_count()
    }

    pub(crate) fn check_field(&self, f: &GridFunction<T>) -> Result<()> {
        if f.mesh() != self.mesh {
            return Err(Error::InvalidInput(format!(
                "field on n_h = {} does not match problem mesh n_h = {}",
                f.mesh().nodes_per_side(),
                self.mesh.nodes_per_side()
            )));
        }
        check_dim(self.dim(), f.len())
    }

    /// `H(y) = A y + D f(y) − M u` for a precomputed load `M u`.
    fn residual_vector(&self, y: &[T], load: &[T]) -> Vec<T> {
        let mut h = vec![T::zero(); y.len()];
        self.stiffness().apply_into(y, &mut h);
        let d = self.lumped().entries();
        for i in 0..y.len() {
            h[i] = h[i] + d[i] * self.nonlinearity.value(y[i]) - load[i];
        }
        h
    }
}

#[derive(Clone, Debug)]
pub struct ForwardSolution<T> {
    pub y: GridFunction<T>,
    /// Selection branch per node under the Newton convention; for `max` this is
    /// `1` exactly where `y_i ≥ 0`.
    pub active_pattern: Vec<usize>,
    pub ssn_iterations: usize,
    pub final_residual: T,
}

/// Solves the forward problem by semi-smooth Newton iteration started from `y0`
/// (zero when `None`).
///
/// Each step solves `(A + D diag(f′_sel(yᵏ))) δy = −H(yᵏ)`. The iteration stops
/// once the selection pattern is unchanged by a step and the residual is below
/// the forward tolerance; for piecewise affine nonlinearities the first
/// unchanged pattern already solves the system up to the linear solver error.
pub fn solve_forward<T: Scalar>(
    problem: &ForwardProblem<T>,
    u: &GridFunction<T>,
    y0: Option<&GridFunction<T>>,
) -> Result<ForwardSolution<T>> {
    solve_forward_with(problem, u, y0, problem.options())
}

/// As [`solve_forward`] with explicit solver options.
pub fn solve_forward_with<T: Scalar>(
    problem: &ForwardProblem<T>,
    u: &GridFunction<T>,
    y0: Option<&GridFunction<T>>,
    opts: &ForwardOptions<T>,
) -> Result<ForwardSolution<T>> {
    problem.check_field(u)?;
    let n = problem.dim();
    let mut y = match y0 {
        Some(y0) => {
            problem.check_field(y0)?;
            y0.values().to_vec()
        }
        None => vec![T::zero(); n],
    };
    let f = problem.nonlinearity();
    let d = problem.lumped().entries();
    let load = problem.mass().apply(u.values())?;

    let mut pattern: Vec<usize> = y.iter().map(|&t| f.branch_right(t)).collect();
    let mut residual = problem.residual_vector(&y, &load);
    let mut residual_norm = norm2(&residual);

    for iteration in 1..=opts.max_iterations {
        let shift: Vec<T> = (0..n).map(|i| d[i] * f.newton_slope(y[i])).collect();
        let newton = ShiftedMatrix::new(problem.stiffness(), shift)?;
        let rhs: Vec<T> = residual.iter().map(|&r| -r).collect();
        let step = solve_on_mesh(&problem.mesh(), &newton, &rhs, None, &opts.linear)?;
        for (yi, &s) in y.iter_mut().zip(&step.x) {
            *yi = *yi + s;
        }

        let next: Vec<usize> = y.iter().map(|&t| f.branch_right(t)).collect();
        residual = problem.residual_vector(&y, &load);
        residual_norm = norm2(&residual);
        let unchanged = next == pattern;
        pattern = next;
        if unchanged && residual_norm <= opts.tolerance {
            return Ok(ForwardSolution {
                y: GridFunction::new(problem.mesh(), Role::State, y)?,
                active_pattern: pattern,
                ssn_iterations: iteration,
                final_residual: residual_norm,
            });
        }
    }
    Err(Error::NewtonFailed {
        iterations: opts.max_iterations,
        residual: residual_norm.as_f64(),
    })
}

/// `‖A y + D f(y) − M u‖₂`.
pub fn forward_residual<T: Scalar>(
    problem: &ForwardProblem<T>,
    y: &GridFunction<T>,
    u: &GridFunction<T>,
) -> Result<T> {
    problem.check_field(y)?;
    problem.check_field(u)?;
    let load = problem.mass().apply(u.values())?;
    Ok(norm2(&problem.residual_vector(y.values(), &load)))
}

/// Forward solution found by exhaustive enumeration of selection patterns.
#[derive(Clone, Debug)]
pub struct EnumeratedSolution<T> {
    pub y: GridFunction<T>,
    pub pattern: Vec<usize>,
}

/// Test oracle: enumerates every assignment of affine branches to nodes,
/// solves the resulting linear system densely and returns the first solution
/// whose node values lie in the (closed) intervals of their assigned branches.
///
/// Requires a piecewise affine nonlinearity and at most
/// [`MAX_ENUMERATED_PATTERNS`] patterns (16 unknowns for `max`).
pub fn brute_force_forward<T: Scalar>(
    problem: &ForwardProblem<T>,
    u: &GridFunction<T>,
) -> Result<EnumeratedSolution<T>> {
    problem.check_field(u)?;
    let f = problem.nonlinearity();
    if !f.is_piecewise_affine() {
        return Err(Error::EnumerationTooLarge(
            "enumeration needs a piecewise affine nonlinearity".into(),
        ));
    }
    let m = problem.dim();
    let radix = f.branches().len();
    let total = (0..m).try_fold(1usize, |acc, _| {
        acc.checked_mul(radix)
            .filter(|&t| t <= MAX_ENUMERATED_PATTERNS)
    });
    let Some(total) = total else {
        return Err(Error::EnumerationTooLarge(format!(
            "{radix}^{m} patterns exceed the limit of {MAX_ENUMERATED_PATTERNS}"
        )));
    };

    let affine: Vec<(T, T)> = f
        .branches()
        .iter()
        .map(|b| (b.derivative(T::zero()), b.value(T::zero())))
        .collect();
    let stiffness = problem.stiffness().to_dense();
    let load = problem.mass().apply(u.values())?;
    let d = problem.lumped().entries();
    let breaks = f.breakpoints();

    let mut pattern = vec![0usize; m];
    for code in 0..total {
        let mut c = code;
        for p in pattern.iter_mut() {
            *p = c % radix;
            c /= radix;
        }
        let mut a = stiffness.clone();
        let mut b = load.clone();
        for i in 0..m {
            let (slope, intercept) = affine[pattern[i]];
            a[i][i] = a[i][i] + d[i] * slope;
            b[i] = b[i] - d[i] * intercept;
        }
        let y = solve_dense(a, b)?;
        let scale = y.iter().fold(T::one(), |s, v| s.max(v.abs()));
        let slack = T::lit(1e-13) * scale;
        let consistent = y.iter().zip(&pattern).all(|(&yi, &s)| {
            let above = s == 0 || yi >= breaks[s - 1] - slack;
            let below = s == breaks.len() || yi <= breaks[s] + slack;
            above && below
        });
        if consistent {
            return Ok(EnumeratedSolution {
                y: GridFunction::new(problem.mesh(), Role::State, y)?,
                pattern,
            });
        }
    }
    Err(Error::Internal(
        "no selection pattern is consistent with its own solution".into(),
    ))
}
