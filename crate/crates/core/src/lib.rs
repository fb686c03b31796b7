//! Bouligand–Landweber iterative regularization for the non-smooth inverse
//! source problem
//!
//! ```text
//! −Δy + max(y, 0) = u  in (0,1)²,   y = 0  on the boundary,
//! ```
//!
//! recovering `u` from noisy observations of `y`.
//!
//! The pieces, bottom up:
//!
//! * [`mesh`] and [`fem`]: uniform Friedrichs–Keller triangulation, P1
//!   stiffness, consistent and lumped mass matrices, discrete L² norms.
//! * [`linalg`] and [`multigrid`]: CSR storage and a preconditioned conjugate
//!   gradient solver for the SPD systems `A + diag(s)`.
//! * [`nonlinearity`] and [`forward`]: piecewise smooth monotone
//!   nonlinearities, the semi-smooth Newton forward solver and an enumeration
//!   oracle for tiny meshes.
//! * [`bouligand`]: the linearized operator `(A + K_y)⁻¹ M` used in place of
//!   the missing derivative.
//! * [`landweber`] and [`record`]: the iteration, discrepancy stopping and
//!   run histories on disk.
//! * [`verification`] and [`experiments`]: empirical checks and the
//!   manufactured-solution campaigns.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`.
//!
//! ```
//! use bouligand_landweber::{ForwardProblem, GridFunction, Role};
//! use bouligand_landweber::forward::solve_forward;
//!
//! let problem = ForwardProblem::positive_part(3).unwrap();
//! let u = GridFunction::new(problem.mesh(), Role::Source, vec![1.0]).unwrap();
//! let y = solve_forward(&problem, &u, None).unwrap().y;
//! assert!((y.values()[0] - 0.125 / 4.25).abs() < 1e-12);
//! ```

// Validation uses `!(x > 0)` style tests so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bouligand;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod forward;
pub mod landweber;
pub mod linalg;
pub mod mesh;
pub mod multigrid;
pub mod nonlinearity;
pub mod record;
mod scalar;
pub mod verification;

pub use error::{Error, Result};
pub use experiments::{ExactData, NoiseMode, NoiseSpec, Start};
pub use landweber::{ParameterCheck, StepRule, Termination};
pub use linalg::{LinearOperator, Preconditioner};
pub use mesh::{Mesh, Role};
pub use scalar::Scalar;

pub type GridFunction = mesh::GridFunction<f64>;
pub type SparseMatrix = linalg::CsrMatrix<f64>;
pub type DiagonalMatrix = linalg::DiagonalMatrix<f64>;
pub type SolveOptions = linalg::SolveOptions<f64>;
pub type PC1Nonlinearity = nonlinearity::PC1Nonlinearity<f64>;
pub type ForwardProblem = forward::ForwardProblem<f64>;
pub type ForwardOptions = forward::ForwardOptions<f64>;
pub type ForwardSolution = forward::ForwardSolution<f64>;
pub type LinearizedOperator<'a> = bouligand::LinearizedOperator<'a, f64>;
pub type LandweberConfig = landweber::LandweberConfig<f64>;
pub type RunRecord = landweber::RunRecord<f64>;
pub type ExactFields = experiments::ExactFields<f64>;
pub type TableCell = experiments::TableCell<f64>;
