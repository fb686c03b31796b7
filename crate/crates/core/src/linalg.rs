//! Sparse symmetric matrices and a preconditioned conjugate gradient solver.
//!
//! Every system in the crate has the form `A + diag(s)` with `A` the stiffness
//! matrix and `s` a nonnegative shift, so a single SPD solver covers the forward
//! Newton steps, the subderivative solves and the Poisson-type auxiliary solves.
//! Reductions run strictly left to right so that identical inputs always yield
//! bit-identical outputs.

use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

/// Action of a square matrix on a vector.
pub trait LinearOperator<T: Scalar> {
    fn dim(&self) -> usize;

    /// `out = K x`. Both slices must have length [`dim`](Self::dim).
    fn apply_into(&self, x: &[T], out: &mut [T]);

    fn diagonal(&self) -> Vec<T>;

    /// Checked matrix-vector product.
    fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![T::zero(); x.len()];
        self.apply_into(x, &mut out);
        Ok(out)
    }
}

/// Compressed sparse row matrix holding both triangles of a symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
    symmetric: bool,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds a matrix from per-row `(column, value)` lists. Duplicate columns are
    /// summed in the order given; columns are sorted within each row.
    pub fn from_rows(rows: Vec<Vec<(usize, T)>>) -> Result<Self> {
        let dim = rows.len();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if c >= dim {
                    return Err(Error::InvalidInput(format!(
                        "column {c} out of range for dimension {dim}"
                    )));
                }
                if last == Some(c) {
                    let slot = values.last_mut().expect("entry exists");
                    *slot = *slot + v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        let mut m = CsrMatrix {
            dim,
            row_ptr,
            col_idx,
            values,
            symmetric: false,
        };
        m.symmetric = m.check_symmetry();
        Ok(m)
    }

    fn check_symmetry(&self) -> bool {
        (0..self.dim).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == Some(v)))
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Iterates the stored `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        let cols = &self.col_idx[range.clone()];
        cols.binary_search(&j)
            .ok()
            .map(|k| self.values[range.start + k])
    }

    /// Quadratic form `vᵀ K w`.
    pub fn bilinear(&self, v: &[T], w: &[T]) -> Result<T> {
        check_dim(self.dim, v.len())?;
        check_dim(self.dim, w.len())?;
        let mut kw = vec![T::zero(); self.dim];
        self.apply_into(w, &mut kw);
        Ok(dot(v, &kw))
    }

    /// Dense copy, intended for small systems and tests.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut dense = vec![vec![T::zero(); self.dim]; self.dim];
        for (i, row) in dense.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        dense
    }
}

impl<T: Scalar> LinearOperator<T> for CsrMatrix<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_into(&self, x: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc = acc + self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
    }

    fn diagonal(&self) -> Vec<T> {
        (0..self.dim)
            .map(|i| self.get(i, i).unwrap_or_else(T::zero))
            .collect()
    }
}

/// Diagonal matrix with nonnegative entries (lumped mass, active-set scalings).
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalMatrix<T> {
    diag: Vec<T>,
}

impl<T: Scalar> DiagonalMatrix<T> {
    pub fn new(diag: Vec<T>) -> Result<Self> {
        if let Some(i) = diag.iter().position(|d| !(*d >= T::zero())) {
            return Err(Error::InvalidInput(format!(
                "diagonal entry {i} is negative or not a number"
            )));
        }
        Ok(DiagonalMatrix { diag })
    }

    pub fn entries(&self) -> &[T] {
        &self.diag
    }

    /// Sum of the diagonal entries.
    pub fn trace(&self) -> T {
        self.diag.iter().fold(T::zero(), |acc, &d| acc + d)
    }
}

impl<T: Scalar> LinearOperator<T> for DiagonalMatrix<T> {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply_into(&self, x: &[T], out: &mut [T]) {
        for ((o, &d), &xi) in out.iter_mut().zip(&self.diag).zip(x) {
            *o = d * xi;
        }
    }

    fn diagonal(&self) -> Vec<T> {
        self.diag.clone()
    }
}

/// `K + diag(shift)` without materializing the sum.
#[derive(Clone, Debug)]
pub struct ShiftedMatrix<'a, T> {
    base: &'a CsrMatrix<T>,
    shift: Vec<T>,
}

impl<'a, T: Scalar> ShiftedMatrix<'a, T> {
    pub fn new(base: &'a CsrMatrix<T>, shift: Vec<T>) -> Result<Self> {
        check_dim(base.dim, shift.len())?;
        Ok(ShiftedMatrix { base, shift })
    }

    pub fn base(&self) -> &CsrMatrix<T> {
        self.base
    }

    pub fn shift(&self) -> &[T] {
        &self.shift
    }
}

impl<T: Scalar> ShiftedMatrix<'_, T> {
    /// The sum `K + diag(shift)` as a CSR matrix.
    pub fn to_csr(&self) -> CsrMatrix<T> {
        let rows = (0..self.base.dim)
            .map(|r| {
                let mut row: Vec<(usize, T)> = self.base.row(r).collect();
                row.push((r, self.shift[r]));
                row
            })
            .collect();
        CsrMatrix::from_rows(rows).expect("indices in range")
    }
}

impl<T: Scalar> LinearOperator<T> for ShiftedMatrix<'_, T> {
    fn dim(&self) -> usize {
        self.base.dim
    }

    fn apply_into(&self, x: &[T], out: &mut [T]) {
        let b = self.base;
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.shift[i] * x[i];
            for k in b.row_ptr[i]..b.row_ptr[i + 1] {
                acc = acc + b.values[k] * x[b.col_idx[k]];
            }
            *o = acc;
        }
    }

    fn diagonal(&self) -> Vec<T> {
        self.base
            .diagonal()
            .into_iter()
            .zip(&self.shift)
            .map(|(d, &s)| d + s)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preconditioner {
    None,
    Diagonal,
    /// Geometric multigrid V-cycle; needs the mesh, see
    /// [`solve_on_mesh`](crate::multigrid::solve_on_mesh).
    Multigrid,
}

/// Approximate inverse `z ≈ K⁻¹ r`; must be symmetric positive definite.
pub trait Precondition<T> {
    fn precondition(&self, r: &[T], z: &mut [T]);
}

/// Scaling by the inverse diagonal; nonpositive diagonal entries are left unscaled.
#[derive(Clone, Debug)]
pub struct Jacobi<T> {
    inv_diag: Vec<T>,
}

impl<T: Scalar> Jacobi<T> {
    pub fn new<K: LinearOperator<T> + ?Sized>(k: &K) -> Self {
        Jacobi {
            inv_diag: k
                .diagonal()
                .into_iter()
                .map(|d| {
                    if d > T::zero() {
                        T::one() / d
                    } else {
                        T::one()
                    }
                })
                .collect(),
        }
    }
}

impl<T: Scalar> Precondition<T> for Jacobi<T> {
    fn precondition(&self, r: &[T], z: &mut [T]) {
        for ((zi, &ri), &di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

struct Identity;

impl<T: Scalar> Precondition<T> for Identity {
    fn precondition(&self, r: &[T], z: &mut [T]) {
        z.copy_from_slice(r);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions<T> {
    /// Relative residual target `‖Kx − b‖₂ ≤ tol·‖b‖₂`.
    pub tolerance: T,
    /// Iteration cap; `None` means ten times the system dimension.
    pub max_iterations: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl<T: Scalar> Default for SolveOptions<T> {
    fn default() -> Self {
        SolveOptions {
            tolerance: T::lit(1e-12),
            max_iterations: None,
            preconditioner: Preconditioner::Diagonal,
        }
    }
}

impl<T: Scalar> SolveOptions<T> {
    pub fn with_tolerance(mut self, tolerance: T) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > T::zero() && self.tolerance < T::one()) {
            return Err(Error::InvalidInput(format!(
                "solver tolerance {} outside (0, 1)",
                self.tolerance
            )));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::InvalidInput("max iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    /// Relative true residual `‖Kx − b‖₂ / ‖b‖₂` of the returned `x`.
    pub relative_residual: T,
}

/// Solves `K x = b` for symmetric positive definite `K` by preconditioned CG.
pub fn solve_spd<T, K>(k: &K, b: &[T], opts: &SolveOptions<T>) -> Result<SolveOutcome<T>>
where
    T: Scalar,
    K: LinearOperator<T> + ?Sized,
{
    solve_spd_from(k, b, None, opts)
}

/// As [`solve_spd`], starting from the initial guess `x0` when given.
pub fn solve_spd_from<T, K>(
    k: &K,
    b: &[T],
    x0: Option<&[T]>,
    opts: &SolveOptions<T>,
) -> Result<SolveOutcome<T>>
where
    T: Scalar,
    K: LinearOperator<T> + ?Sized,
{
    match opts.preconditioner {
        Preconditioner::None => pcg(k, b, x0, opts, &Identity),
        Preconditioner::Diagonal => pcg(k, b, x0, opts, &Jacobi::new(k)),
        Preconditioner::Multigrid => Err(Error::InvalidInput(
            "multigrid preconditioning needs the mesh; use multigrid::solve_on_mesh".into(),
        )),
    }
}

/// Factor above the requested tolerance that PCG accepts once the true
/// residual stops decreasing between restarts.
pub const STAGNATION_SLACK: f64 = 1e3;

/// Preconditioned CG with a caller-supplied preconditioner.
pub fn pcg<T, K, P>(
    k: &K,
    b: &[T],
    x0: Option<&[T]>,
    opts: &SolveOptions<T>,
    precond: &P,
) -> Result<SolveOutcome<T>>
where
    T: Scalar,
    K: LinearOperator<T> + ?Sized,
    P: Precondition<T> + ?Sized,
{
    opts.validate()?;
    let n = k.dim();
    check_dim(n, b.len())?;
    if let Some(x0) = x0 {
        check_dim(n, x0.len())?;
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("right-hand side is not finite".into()));
    }
    let b_norm = norm2(b);
    if b_norm == T::zero() {
        return Ok(SolveOutcome {
            x: vec![T::zero(); n],
            iterations: 0,
            relative_residual: T::zero(),
        });
    }

    let max_iter = opts.max_iterations.unwrap_or(10 * n.max(1));
    let target = opts.tolerance * b_norm;

    let mut x = x0.map_or_else(|| vec![T::zero(); n], <[T]>::to_vec);
    let mut r = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    let mut p = vec![T::zero(); n];
    let mut kp = vec![T::zero(); n];
    let mut iterations = 0;

    // The recursively updated residual drifts from the true one; restart from
    // the true residual until the latter meets the target. On fine meshes the
    // target can lie below the rounding floor of the true residual, which shows
    // up as a restart that fails to halve it.
    let mut previous = T::infinity();
    loop {
        k.apply_into(&x, &mut r);
        for (ri, &bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let true_res = norm2(&r);
        let stalled = true_res > previous * T::lit(0.5);
        if true_res <= target || (stalled && true_res <= target * T::lit(STAGNATION_SLACK)) {
            return Ok(SolveOutcome {
                x,
                iterations,
                relative_residual: true_res / b_norm,
            });
        }
        previous = true_res;
        if stalled || iterations >= max_iter {
            return Err(Error::LinearSolveFailed {
                iterations,
                residual: (true_res / b_norm).as_f64(),
            });
        }

        precond.precondition(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            k.apply_into(&p, &mut kp);
            let pkp = dot(&p, &kp);
            if !(pkp > T::zero()) {
                return Err(Error::InvalidInput(
                    "operator is not positive definite".into(),
                ));
            }
            let alpha = rz / pkp;
            for i in 0..n {
                x[i] = x[i] + alpha * p[i];
                r[i] = r[i] - alpha * kp[i];
            }
            iterations += 1;
            if norm2(&r) <= target {
                break;
            }
            precond.precondition(&r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for (pi, &zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
    }
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
pub fn solve_dense<T: Scalar>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Result<Vec<T>> {
    let n = b.len();
    check_dim(n, a.len())?;
    for row in &a {
        check_dim(n, row.len())?;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a[i][col]
                    .abs()
                    .partial_cmp(&a[j][col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("non-empty pivot range");
        if a[pivot][col] == T::zero() {
            return Err(Error::InvalidInput("singular dense matrix".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for i in col + 1..n {
            let factor = a[i][col] / a[col][col];
            if factor == T::zero() {
                continue;
            }
            let (upper, lower) = a.split_at_mut(i);
            for (x, &p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x = *x - factor * p;
            }
            b[i] = b[i] - factor * b[col];
        }
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut acc = b[i];
        for j in i + 1..n {
            acc = acc - a[i][j] * x[j];
        }
        x[i] = acc / a[i][i];
    }
    Ok(x)
}

/// Left-to-right dot product.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_1d(n: usize) -> CsrMatrix<f64> {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.0)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                }
                r
            })
            .collect();
        CsrMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn scalar_system() {
        let k = CsrMatrix::from_rows(vec![vec![(0, 4.0)]]).unwrap();
        let out = solve_spd(&k, &[0.125], &SolveOptions::default()).unwrap();
        assert_eq!(out.x, vec![0.03125]);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let k = laplacian_1d(10);
        let out = solve_spd(&k, &[0.0; 10], &SolveOptions::default()).unwrap();
        assert!(out.x.iter().all(|&v| v == 0.0));
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn non_finite_rhs_rejected() {
        let k = laplacian_1d(3);
        let err = solve_spd(&k, &[1.0, f64::NAN, 0.0], &SolveOptions::default());
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let k = laplacian_1d(200);
        let b = vec![1.0; 200];
        let opts = SolveOptions {
            max_iterations: Some(3),
            ..SolveOptions::default()
        };
        match solve_spd(&k, &b, &opts) {
            Err(Error::LinearSolveFailed {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-12);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn tolerance_below_rounding_floor_stops_at_the_floor() {
        let k = laplacian_1d(400);
        let k = ShiftedMatrix::new(&k, vec![2.0; 400]).unwrap();
        let b: Vec<f64> = (0..400).map(|i| (i as f64 * 0.37).sin()).collect();
        let opts = SolveOptions {
            tolerance: 1e-17,
            ..SolveOptions::default()
        };
        let out = solve_spd(&k, &b, &opts).unwrap();
        assert!(out.relative_residual > 1e-17);
        assert!(out.relative_residual <= 1e-17 * STAGNATION_SLACK);
        assert!(out.iterations < 4000);
    }

    #[test]
    fn residual_contract_and_determinism() {
        let k = laplacian_1d(300);
        let shifted =
            ShiftedMatrix::new(&k, (0..300).map(|i| (i % 3) as f64 * 0.1).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        for pre in [Preconditioner::None, Preconditioner::Diagonal] {
            let opts = SolveOptions {
                preconditioner: pre,
                ..SolveOptions::default()
            };
            let a = solve_spd(&shifted, &b, &opts).unwrap();
            let again = solve_spd(&shifted, &b, &opts).unwrap();
            assert_eq!(a.x, again.x);
            let kx = shifted.apply(&a.x).unwrap();
            let res: Vec<f64> = kx.iter().zip(&b).map(|(p, q)| p - q).collect();
            assert!(norm2(&res) <= 1e-12 * norm2(&b));
        }
    }

    #[test]
    fn diagonal_action_is_elementwise() {
        let d = DiagonalMatrix::new(vec![1.0, 2.0, 0.5]).unwrap();
        assert_eq!(d.apply(&[3.0, 4.0, 8.0]).unwrap(), vec![3.0, 8.0, 4.0]);
        assert!(DiagonalMatrix::new(vec![-1.0]).is_err());
        assert!(matches!(
            d.apply(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dense_solver_matches_cg() {
        let k = laplacian_1d(8);
        let b: Vec<f64> = (0..8).map(|i| i as f64 - 3.0).collect();
        let dense = solve_dense(k.to_dense(), b.clone()).unwrap();
        let cg = solve_spd(&k, &b, &SolveOptions::default()).unwrap();
        assert!(max_abs_diff(&dense, &cg.x) < 1e-12);
    }

    #[test]
    fn duplicates_are_summed_and_symmetry_detected() {
        let m = CsrMatrix::from_rows(vec![
            vec![(0, 1.0), (1, 0.5), (0, 1.0)],
            vec![(0, 0.5), (1, 3.0)],
        ])
        .unwrap();
        assert_eq!(m.get(0, 0), Some(2.0));
        assert!(m.is_symmetric());
        let skew = CsrMatrix::from_rows(vec![vec![(1, 1.0)], vec![(0, 2.0)]]).unwrap();
        assert!(!skew.is_symmetric());
    }
}
