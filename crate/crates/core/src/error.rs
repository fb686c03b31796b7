use thiserror::Error;

/// Errors raised by the discretization, solvers and experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value {value} at interior node {node} ({x1}, {x2})")]
    NonFiniteField {
        node: usize,
        x1: f64,
        x2: f64,
        value: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    LinearSolveFailed { iterations: usize, residual: f64 },

    #[error(
        "semi-smooth Newton did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NewtonFailed { iterations: usize, residual: f64 },

    #[error("brute-force enumeration refused: {0}")]
    EnumerationTooLarge(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("degenerate pair: {0}")]
    DegeneratePair(String),

    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
