//! Geometric multigrid preconditioner for `A + diag(s)` on the uniform mesh.
//!
//! Friedrichs–Keller meshes nest under uniform refinement when `n_h − 1` is
//! even, so coarse spaces are spanned by the coarse hat functions and the
//! prolongation is exact linear interpolation. Coarse operators are Galerkin
//! products `Pᵀ K P`, which carry the nonnegative shift down the hierarchy.
//! One V(1,1)-cycle with a forward Gauss–Seidel pre-smoother and a backward
//! post-smoother is a symmetric positive definite preconditioner for CG.

use crate::error::Result;
use crate::linalg::{
    pcg, solve_spd_from, CsrMatrix, LinearOperator, Precondition, Preconditioner, ShiftedMatrix,
    SolveOptions, SolveOutcome,
};
use crate::mesh::Mesh;
use crate::scalar::Scalar;

/// Coarsest systems up to this size are solved by dense Cholesky.
const DIRECT_LIMIT: usize = 1024;

struct Level<T> {
    matrix: CsrMatrix<T>,
    inv_diag: Vec<T>,
    /// Prolongation from the next coarser level, row per node of this level.
    prolongation: Option<Vec<Vec<(usize, T)>>>,
}

pub struct Multigrid<T> {
    levels: Vec<Level<T>>,
    /// Row-major lower Cholesky factor of the coarsest matrix, if small enough.
    coarse_factor: Option<Vec<T>>,
}

/// Linear interpolation from the mesh with `(n − 1)/2 + 1` nodes per side.
fn interpolation<T: Scalar>(fine: &Mesh, coarse: &Mesh) -> Vec<Vec<(usize, T)>> {
    let half = T::lit(0.5);
    let m = fine.interior_side();
    let mut rows = Vec::with_capacity(fine.interior_count());
    for j in 1..=m {
        for i in 1..=m {
            let (ci, cj) = (i / 2, j / 2);
            let parents: Vec<((usize, usize), T)> = match (i % 2, j % 2) {
                (0, 0) => vec![((ci, cj), T::one())],
                (1, 0) => vec![((ci, cj), half), ((ci + 1, cj), half)],
                (0, 1) => vec![((ci, cj), half), ((ci, cj + 1), half)],
                _ => vec![((ci, cj), half), ((ci + 1, cj + 1), half)],
            };
            rows.push(
                parents
                    .into_iter()
                    .filter_map(|((a, b), w)| coarse.interior_index(a, b).map(|k| (k, w)))
                    .collect(),
            );
        }
    }
    rows
}

fn galerkin<T: Scalar>(k: &CsrMatrix<T>, p: &[Vec<(usize, T)>], coarse_dim: usize) -> CsrMatrix<T> {
    let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); coarse_dim];
    for (a, pa) in p.iter().enumerate() {
        for (b, kab) in k.row(a) {
            for &(ci, wa) in pa {
                for &(cj, wb) in &p[b] {
                    rows[ci].push((cj, wa * kab * wb));
                }
            }
        }
    }
    CsrMatrix::from_rows(rows).expect("coarse indices in range")
}

fn inverse_diagonal<T: Scalar>(k: &CsrMatrix<T>) -> Vec<T> {
    (0..k.dim())
        .map(|i| {
            let d = k.get(i, i).unwrap_or_else(T::zero);
            if d > T::zero() {
                T::one() / d
            } else {
                T::one()
            }
        })
        .collect()
}

fn dense_cholesky<T: Scalar>(k: &CsrMatrix<T>) -> Option<Vec<T>> {
    let n = k.dim();
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for (j, v) in k.row(i) {
            if j <= i {
                l[i * n + j] = v;
            }
        }
    }
    for j in 0..n {
        let mut d = l[j * n + j];
        for p in 0..j {
            d = d - l[j * n + p] * l[j * n + p];
        }
        if !(d > T::zero()) {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut v = l[i * n + j];
            for p in 0..j {
                v = v - l[i * n + p] * l[j * n + p];
            }
            l[i * n + j] = v / d;
        }
    }
    Some(l)
}

fn cholesky_solve<T: Scalar>(l: &[T], b: &[T], x: &mut [T]) {
    let n = b.len();
    for i in 0..n {
        let mut v = b[i];
        for p in 0..i {
            v = v - l[i * n + p] * x[p];
        }
        x[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = x[i];
        for p in i + 1..n {
            v = v - l[p * n + i] * x[p];
        }
        x[i] = v / l[i * n + i];
    }
}

fn gauss_seidel<T: Scalar>(k: &CsrMatrix<T>, inv_diag: &[T], b: &[T], x: &mut [T], forward: bool) {
    let n = k.dim();
    let (cols, vals, ptr) = (k.col_idx(), k.values(), k.row_ptr());
    let mut sweep = |i: usize| {
        let mut acc = b[i];
        for p in ptr[i]..ptr[i + 1] {
            let j = cols[p];
            if j != i {
                acc = acc - vals[p] * x[j];
            }
        }
        x[i] = acc * inv_diag[i];
    };
    if forward {
        (0..n).for_each(&mut sweep);
    } else {
        (0..n).rev().for_each(&mut sweep);
    }
}

impl<T: Scalar> Multigrid<T> {
    /// Builds the hierarchy for the symmetric positive definite matrix `k` on
    /// the interior nodes of `mesh`. Meshes with odd `n_h − 1` get a single
    /// level, which reduces the cycle to symmetric Gauss–Seidel.
    pub fn new(mesh: &Mesh, k: CsrMatrix<T>) -> Result<Self> {
        crate::error::check_dim(mesh.interior_count(), k.dim())?;
        let mut levels = Vec::new();
        let mut mesh = *mesh;
        let mut matrix = k;
        loop {
            let n = mesh.nodes_per_side();
            let coarsen = (n - 1).is_multiple_of(2) && n >= 5 && matrix.dim() > 1;
            if !coarsen {
                levels.push(Level {
                    inv_diag: inverse_diagonal(&matrix),
                    matrix,
                    prolongation: None,
                });
                break;
            }
            let coarse = Mesh::new((n - 1) / 2 + 1)?;
            let p = interpolation::<T>(&mesh, &coarse);
            let next = galerkin(&matrix, &p, coarse.interior_count());
            levels.push(Level {
                inv_diag: inverse_diagonal(&matrix),
                matrix,
                prolongation: Some(p),
            });
            mesh = coarse;
            matrix = next;
        }
        let last = &levels.last().expect("at least one level").matrix;
        let coarse_factor = if last.dim() <= DIRECT_LIMIT {
            dense_cholesky(last)
        } else {
            None
        };
        Ok(Multigrid {
            levels,
            coarse_factor,
        })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    fn cycle(&self, level: usize, b: &[T], x: &mut [T]) {
        let lv = &self.levels[level];
        x.iter_mut().for_each(|v| *v = T::zero());
        let Some(p) = &lv.prolongation else {
            match &self.coarse_factor {
                Some(l) => cholesky_solve(l, b, x),
                None => {
                    gauss_seidel(&lv.matrix, &lv.inv_diag, b, x, true);
                    gauss_seidel(&lv.matrix, &lv.inv_diag, b, x, false);
                }
            }
            return;
        };
        gauss_seidel(&lv.matrix, &lv.inv_diag, b, x, true);

        let mut r = vec![T::zero(); b.len()];
        lv.matrix.apply_into(x, &mut r);
        let coarse_dim = self.levels[level + 1].matrix.dim();
        let mut rc = vec![T::zero(); coarse_dim];
        for (i, row) in p.iter().enumerate() {
            let ri = b[i] - r[i];
            for &(c, w) in row {
                rc[c] = rc[c] + w * ri;
            }
        }
        let mut ec = vec![T::zero(); coarse_dim];
        self.cycle(level + 1, &rc, &mut ec);
        for (xi, row) in x.iter_mut().zip(p) {
            for &(c, w) in row {
                *xi = *xi + w * ec[c];
            }
        }

        gauss_seidel(&lv.matrix, &lv.inv_diag, b, x, false);
    }
}

impl<T: Scalar> Precondition<T> for Multigrid<T> {
    fn precondition(&self, r: &[T], z: &mut [T]) {
        self.cycle(0, r, z);
    }
}

/// Solves `(A + diag(s)) x = b` on the interior nodes of `mesh`, building a
/// multigrid hierarchy when the options ask for it.
pub fn solve_on_mesh<T: Scalar>(
    mesh: &Mesh,
    k: &ShiftedMatrix<'_, T>,
    b: &[T],
    x0: Option<&[T]>,
    opts: &SolveOptions<T>,
) -> Result<SolveOutcome<T>> {
    match opts.preconditioner {
        Preconditioner::Multigrid => {
            let mg = Multigrid::new(mesh, k.to_csr())?;
            pcg(k, b, x0, opts, &mg)
        }
        _ => solve_spd_from(k, b, x0, opts),
    }
}
