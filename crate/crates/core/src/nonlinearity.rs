//! Piecewise continuously differentiable, non-decreasing nonlinearities.
//!
//! A nonlinearity with kinks `t₁ < … < t_k` is stored as `k + 1` smooth
//! selection branches; branch `i` is active on `(t_{i−1}, t_i]` with
//! `t₀ = −∞` and `t_{k+1} = +∞`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// One smooth selection function together with its derivative.
#[derive(Clone)]
pub enum Branch<T> {
    Affine {
        slope: T,
        intercept: T,
    },
    Smooth {
        value: ScalarFn<T>,
        derivative: ScalarFn<T>,
    },
}

impl<T: Scalar> Branch<T> {
    pub fn affine(slope: T, intercept: T) -> Self {
        Branch::Affine { slope, intercept }
    }

    pub fn smooth<F, D>(value: F, derivative: D) -> Self
    where
        F: Fn(T) -> T + Send + Sync + 'static,
        D: Fn(T) -> T + Send + Sync + 'static,
    {
        Branch::Smooth {
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        }
    }

    #[inline]
    pub fn value(&self, t: T) -> T {
        match self {
            Branch::Affine { slope, intercept } => *slope * t + *intercept,
            Branch::Smooth { value, .. } => value(t),
        }
    }

    #[inline]
    pub fn derivative(&self, t: T) -> T {
        match self {
            Branch::Affine { slope, .. } => *slope,
            Branch::Smooth { derivative, .. } => derivative(t),
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, Branch::Affine { .. })
    }
}

impl<T: fmt::Debug> fmt::Debug for Branch<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Affine { slope, intercept } => f
                .debug_struct("Affine")
                .field("slope", slope)
                .field("intercept", intercept)
                .finish(),
            Branch::Smooth { .. } => f.write_str("Smooth(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PC1Nonlinearity<T> {
    breakpoints: Vec<T>,
    branches: Vec<Branch<T>>,
}

impl<T: Scalar> PC1Nonlinearity<T> {
    /// Validates continuity at every kink (to `1e-12`, relative for large
    /// values) and spot-checks that every branch is non-decreasing on its
    /// interval.
    pub fn new(breakpoints: Vec<T>, branches: Vec<Branch<T>>) -> Result<Self> {
        if branches.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "{} breakpoints need {} branches, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                branches.len()
            )));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("breakpoints must be finite".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        let tol = T::lit(1e-12);
        for (i, &t) in breakpoints.iter().enumerate() {
            let left = branches[i].value(t);
            let right = branches[i + 1].value(t);
            if (left - right).abs() > tol * T::one().max(left.abs()) {
                return Err(Error::InvalidInput(format!(
                    "branches {i} and {} disagree at breakpoint {t}: {left} vs {right}",
                    i + 1
                )));
            }
        }

        let samples = 33;
        let span = T::lit(10.0);
        for (i, branch) in branches.iter().enumerate() {
            let lo = if i == 0 {
                None
            } else {
                Some(breakpoints[i - 1])
            };
            let hi = breakpoints.get(i).copied();
            let (a, b) = match (lo, hi) {
                (Some(a), Some(b)) => (a, b),
                (None, Some(b)) => (b - span, b),
                (Some(a), None) => (a, a + span),
                (None, None) => (-span, span),
            };
            for s in 0..=samples {
                let t = a + (b - a) * T::from_usize(s).unwrap() / T::from_usize(samples).unwrap();
                if branch.derivative(t) < -tol {
                    return Err(Error::InvalidInput(format!(
                        "branch {i} is decreasing at t = {t}"
                    )));
                }
            }
        }
        Ok(PC1Nonlinearity {
            breakpoints,
            branches,
        })
    }

    /// `max(t, 0)`: one kink at zero, branches `0` and `t`.
    pub fn positive_part() -> Self {
        PC1Nonlinearity::new(
            vec![T::zero()],
            vec![
                Branch::affine(T::zero(), T::zero()),
                Branch::affine(T::one(), T::zero()),
            ],
        )
        .expect("max(t, 0) is a valid PC1 nonlinearity")
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }

    pub fn branches(&self) -> &[Branch<T>] {
        &self.branches
    }

    /// Whether every branch is affine, in which case the discrete forward
    /// problem is piecewise linear.
    pub fn is_piecewise_affine(&self) -> bool {
        self.branches.iter().all(Branch::is_affine)
    }

    /// Branch whose half-open interval `(t_{i−1}, t_i]` contains `t`.
    #[inline]
    pub fn branch_left(&self, t: T) -> usize {
        self.breakpoints.partition_point(|&b| b < t)
    }

    /// Branch index with kinks assigned to the branch on their right.
    #[inline]
    pub fn branch_right(&self, t: T) -> usize {
        self.breakpoints.partition_point(|&b| b <= t)
    }

    #[inline]
    pub fn value(&self, t: T) -> T {
        self.branches[self.branch_left(t)].value(t)
    }

    /// Slope used in the semi-smooth Newton matrix; at a kink the right branch
    /// is taken, which for `max` gives the active set `{t ≥ 0}`.
    #[inline]
    pub fn newton_slope(&self, t: T) -> T {
        self.branches[self.branch_right(t)].derivative(t)
    }

    /// Element of the Bouligand subdifferential selected by the left-closed
    /// convention; for `max` this is the indicator of `t > 0`.
    #[inline]
    pub fn bouligand_slope(&self, t: T) -> T {
        self.branches[self.branch_left(t)].derivative(t)
    }
}
