//! Bouligand subderivative of the discrete control-to-state map.
//!
//! At a state `y = F(u)` the subderivative maps a direction `w` to the solution
//! `η` of `(A + K_y) η = M w`, where `K_y = D diag(a)` and `a_i` is the
//! Bouligand slope of the nonlinearity at `y_i` (for `max`, the indicator of
//! `y_i > 0`). The map `(A + K_y)⁻¹ M` is self-adjoint in the `M` inner
//! product, so it doubles as its own adjoint in the Landweber step.

use crate::error::Result;
use crate::forward::ForwardProblem;
use crate::linalg::{LinearOperator, ShiftedMatrix, SolveOptions};
use crate::mesh::{GridFunction, Role};
use crate::multigrid::solve_on_mesh;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct LinearizedOperator<'a, T> {
    state: GridFunction<T>,
    coefficient: Vec<T>,
    matrix: ShiftedMatrix<'a, T>,
}

impl<'a, T: Scalar> LinearizedOperator<'a, T> {
    /// Base state the operator linearizes around.
    pub fn state(&self) -> &GridFunction<T> {
        &self.state
    }

    /// Per-node Bouligand slopes `a_i`.
    pub fn coefficient(&self) -> &[T] {
        &self.coefficient
    }

    /// The diagonal `K_y = D diag(a)`.
    pub fn shift(&self) -> &[T] {
        self.matrix.shift()
    }

    pub fn matrix(&self) -> &ShiftedMatrix<'a, T> {
        &self.matrix
    }
}

pub fn build_linearized<'a, T: Scalar>(
    problem: &'a ForwardProblem<T>,
    y: &GridFunction<T>,
) -> Result<LinearizedOperator<'a, T>> {
    problem.check_field(y)?;
    let f = problem.nonlinearity();
    let coefficient: Vec<T> = y.values().iter().map(|&t| f.bouligand_slope(t)).collect();
    let shift = coefficient
        .iter()
        .zip(problem.lumped().entries())
        .map(|(&a, &d)| a * d)
        .collect();
    Ok(LinearizedOperator {
        state: y.clone(),
        coefficient,
        matrix: ShiftedMatrix::new(problem.stiffness(), shift)?,
    })
}

/// `η = (A + K_y)⁻¹ M w`.
pub fn apply_subderivative<T: Scalar>(
    op: &LinearizedOperator<'_, T>,
    mass: &crate::linalg::CsrMatrix<T>,
    w: &GridFunction<T>,
    opts: &SolveOptions<T>,
) -> Result<GridFunction<T>> {
    op.state.check_same_mesh(w)?;
    let rhs = mass.apply(w.values())?;
    let eta = solve_on_mesh(&w.mesh(), &op.matrix, &rhs, None, opts)?;
    GridFunction::new(w.mesh(), Role::State, eta.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_forward;

    fn scalar(p: &ForwardProblem<f64>, v: f64, role: Role) -> GridFunction<f64> {
        GridFunction::new(p.mesh(), role, vec![v]).unwrap()
    }

    #[test]
    fn negative_state_gives_plain_stiffness() {
        let p = ForwardProblem::positive_part(6).unwrap();
        let y = GridFunction::new(p.mesh(), Role::State, vec![-1.0; 16]).unwrap();
        let op = build_linearized(&p, &y).unwrap();
        assert!(op.shift().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn scalar_operator_values() {
        let p = ForwardProblem::positive_part(3).unwrap();
        let op = build_linearized(&p, &scalar(&p, 0.03, Role::State)).unwrap();
        assert_eq!(op.matrix().diagonal(), vec![4.25]);
        let at_kink = build_linearized(&p, &scalar(&p, 0.0, Role::State)).unwrap();
        assert_eq!(at_kink.shift(), &[0.0]);
    }

    #[test]
    fn scalar_subderivative_solves() {
        let p = ForwardProblem::positive_part(3).unwrap();
        let opts = SolveOptions::default();
        let w = scalar(&p, 1.0, Role::Data);

        let y_neg = solve_forward(&p, &scalar(&p, -1.0, Role::Source), None)
            .unwrap()
            .y;
        let op = build_linearized(&p, &y_neg).unwrap();
        let eta = apply_subderivative(&op, p.mass(), &w, &opts).unwrap();
        assert!((eta.values()[0] - 0.03125).abs() < 1e-15);

        let y_pos = solve_forward(&p, &scalar(&p, 1.0, Role::Source), None)
            .unwrap()
            .y;
        let op = build_linearized(&p, &y_pos).unwrap();
        let eta = apply_subderivative(&op, p.mass(), &w, &opts).unwrap();
        assert!((eta.values()[0] - 0.125 / 4.25).abs() < 1e-15);

        let zero = apply_subderivative(&op, p.mass(), &scalar(&p, 0.0, Role::Data), &opts).unwrap();
        assert_eq!(zero.values(), &[0.0]);
    }
}
