//! P1 finite element matrices and the discrete L² inner product.

use crate::error::{check_dim, Result};
use crate::linalg::{dot, CsrMatrix, DiagonalMatrix, LinearOperator};
use crate::mesh::{GridFunction, Mesh};
use crate::scalar::Scalar;

/// Stiffness, consistent mass and lumped mass matrices of one mesh.
#[derive(Clone, Debug)]
pub struct Assembly<T> {
    pub stiffness: CsrMatrix<T>,
    pub mass: CsrMatrix<T>,
    pub lumped: DiagonalMatrix<T>,
}

/// Assembles the matrices restricted to interior unknowns (homogeneous
/// Dirichlet conditions by elimination).
pub fn assemble<T: Scalar>(mesh: &Mesh) -> Assembly<T> {
    assemble_with(mesh, mesh.interior_count(), |i, j| {
        mesh.interior_index(i, j)
    })
}

/// Assembles the matrices over all grid points, boundary included; grid point
/// `(i, j)` has index `j·n_h + i`.
pub fn assemble_full<T: Scalar>(mesh: &Mesh) -> Assembly<T> {
    let n = mesh.nodes_per_side();
    assemble_with(mesh, mesh.node_count(), |i, j| Some(j * n + i))
}

fn assemble_with<T, I>(mesh: &Mesh, dim: usize, index: I) -> Assembly<T>
where
    T: Scalar,
    I: Fn(usize, usize) -> Option<usize>,
{
    let h: T = mesh.h();
    let h2 = h * h;
    let mut stiff_rows: Vec<Vec<(usize, T)>> = vec![Vec::with_capacity(7); dim];
    let mut mass_rows: Vec<Vec<(usize, T)>> = vec![Vec::with_capacity(7); dim];
    let mut lumped = vec![T::zero(); dim];

    for tri in mesh.triangles() {
        let (ke, me, le) = element_matrices::<T>(&tri);
        let idx = tri.map(|(i, j)| index(i, j));
        for a in 0..3 {
            let Some(row) = idx[a] else { continue };
            lumped[row] = lumped[row] + le;
            for b in 0..3 {
                let Some(col) = idx[b] else { continue };
                if ke[a][b] != T::zero() {
                    stiff_rows[row].push((col, ke[a][b]));
                }
                mass_rows[row].push((col, me[a][b] * h2));
            }
        }
    }

    Assembly {
        stiffness: CsrMatrix::from_rows(stiff_rows).expect("indices in range"),
        mass: CsrMatrix::from_rows(mass_rows).expect("indices in range"),
        lumped: DiagonalMatrix::new(lumped.into_iter().map(|l| l * h2 / T::lit(6.0)).collect())
            .expect("areas are nonnegative"),
    }
}

/// Element stiffness, unscaled element mass and twice the area (in grid units) of a
/// triangle given in integer grid coordinates. The stiffness of a P1 element is
/// invariant under uniform scaling in 2D, so working in grid units keeps the
/// stencil entries exact; mass terms are scaled by `h²` by the caller.
fn element_matrices<T: Scalar>(tri: &[(usize, usize); 3]) -> ([[T; 3]; 3], [[T; 3]; 3], T) {
    let p = tri.map(|(i, j)| (i as i64, j as i64));
    let twice_area = (p[1].0 - p[0].0) * (p[2].1 - p[0].1) - (p[2].0 - p[0].0) * (p[1].1 - p[0].1);
    debug_assert!(twice_area > 0, "triangles are counter-clockwise");
    let b = [p[1].1 - p[2].1, p[2].1 - p[0].1, p[0].1 - p[1].1];
    let c = [p[2].0 - p[1].0, p[0].0 - p[2].0, p[1].0 - p[0].0];
    let ta = T::from_i64(twice_area).expect("small integer");
    let two = T::lit(2.0);
    let mut ke = [[T::zero(); 3]; 3];
    let mut me = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for bb in 0..3 {
            let num = T::from_i64(b[a] * b[bb] + c[a] * c[bb]).expect("small integer");
            ke[a][bb] = num / (two * ta);
            let factor = if a == bb { two } else { T::one() };
            me[a][bb] = ta * factor / T::lit(24.0);
        }
    }
    (ke, me, ta)
}

/// `vᵀ M w`.
pub fn m_inner<T: Scalar>(
    mass: &CsrMatrix<T>,
    v: &GridFunction<T>,
    w: &GridFunction<T>,
) -> Result<T> {
    v.check_same_mesh(w)?;
    mass.bilinear(v.values(), w.values())
}

/// `sqrt(vᵀ M v)`, the L² norm of the piecewise linear function `v`.
pub fn m_norm<T: Scalar>(mass: &CsrMatrix<T>, v: &GridFunction<T>) -> Result<T> {
    m_norm_slice(mass, v.values())
}

pub(crate) fn m_norm_slice<T: Scalar>(mass: &CsrMatrix<T>, v: &[T]) -> Result<T> {
    check_dim(mass.dim(), v.len())?;
    let mut mv = vec![T::zero(); v.len()];
    mass.apply_into(v, &mut mv);
    Ok(dot(v, &mv).max(T::zero()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{interpolate, Role};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_interior_node() {
        let mesh = Mesh::new(3).unwrap();
        let asm = assemble::<f64>(&mesh);
        assert_eq!(asm.stiffness.to_dense(), vec![vec![4.0]]);
        assert!((asm.mass.to_dense()[0][0] - 0.125).abs() < 1e-16);
        assert_eq!(asm.lumped.entries(), &[0.25]);
    }

    #[test]
    fn five_point_stencil_is_exact() {
        for n in [4, 6, 9] {
            let mesh = Mesh::new(n).unwrap();
            let a = assemble::<f64>(&mesh).stiffness;
            for k in 0..mesh.interior_count() {
                let mut neighbors = 0;
                for (col, v) in a.row(k) {
                    if col == k {
                        assert_eq!(v, 4.0);
                    } else {
                        assert_eq!(v, -1.0);
                        neighbors += 1;
                    }
                }
                assert!(neighbors <= 4);
            }
        }
    }

    #[test]
    fn mass_stencil_interior() {
        let mesh = Mesh::new(7).unwrap();
        let h2 = mesh.h::<f64>().powi(2);
        let asm = assemble::<f64>(&mesh);
        let center = mesh.interior_index(3, 3).unwrap();
        let row: Vec<_> = asm.mass.row(center).collect();
        assert_eq!(row.len(), 7);
        for (col, v) in row {
            let expect = if col == center { h2 / 2.0 } else { h2 / 12.0 };
            assert!((v - expect).abs() < 1e-15);
        }
        // Edge neighbors along the bottom-left/top-right diagonal only.
        assert!(asm
            .mass
            .get(center, mesh.interior_index(4, 4).unwrap())
            .is_some());
        assert!(asm
            .mass
            .get(center, mesh.interior_index(2, 4).unwrap())
            .is_none());
        for d in asm.lumped.entries() {
            assert!((d - h2).abs() < 1e-15);
        }
    }

    #[test]
    fn full_matrix_identities() {
        for n in [3, 5, 12, 33] {
            let mesh = Mesh::new(n).unwrap();
            let full = assemble_full::<f64>(&mesh);
            let total: f64 = full.mass.values().iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "n={n}: {total}");
            for (i, j) in (1..n - 1).flat_map(|j| (1..n - 1).map(move |i| (i, j))) {
                let g = j * n + i;
                let row_sum: f64 = full.stiffness.row(g).map(|(_, v)| v).sum();
                assert_eq!(row_sum, 0.0);
                let mass_sum: f64 = full.mass.row(g).map(|(_, v)| v).sum();
                assert!((full.lumped.entries()[g] - mass_sum).abs() < 1e-14);
            }
            assert!(full.stiffness.is_symmetric() && full.mass.is_symmetric());
        }
    }

    #[test]
    fn assembly_is_deterministic() {
        let mesh = Mesh::new(20).unwrap();
        let a = assemble::<f64>(&mesh);
        let b = assemble::<f64>(&mesh);
        assert_eq!(a.stiffness, b.stiffness);
        assert_eq!(a.mass, b.mass);
        assert_eq!(a.lumped, b.lumped);
    }

    #[test]
    fn norm_of_first_eigenfunction() {
        let mesh = Mesh::new(128).unwrap();
        let asm = assemble::<f64>(&mesh);
        let pi = std::f64::consts::PI;
        let v = interpolate(&mesh, Role::State, |x: f64, y: f64| {
            (pi * x).sin() * (pi * y).sin()
        })
        .unwrap();
        let norm = m_norm(&asm.mass, &v).unwrap();
        assert!((norm - 0.5).abs() < 1e-3, "{norm}");
        let zero = GridFunction::zeros(mesh, Role::State);
        assert_eq!(m_norm(&asm.mass, &zero).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_symmetry() {
        let mesh = Mesh::new(17).unwrap();
        let asm = assemble::<f64>(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut draw = || {
                let vals = (0..mesh.interior_count())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                GridFunction::new(mesh, Role::Source, vals).unwrap()
            };
            let (v, w) = (draw(), draw());
            let vw = m_inner(&asm.mass, &v, &w).unwrap();
            let wv = m_inner(&asm.mass, &w, &v).unwrap();
            assert!((vw - wv).abs() <= 1e-14 * vw.abs() + 1e-18, "{vw} vs {wv}");
            let nn = m_norm(&asm.mass, &v).unwrap();
            assert!((nn * nn - m_inner(&asm.mass, &v, &v).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn stiffness_symmetry_via_probes() {
        let mesh = Mesh::new(16).unwrap();
        let a = assemble::<f64>(&mesh).stiffness;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = mesh.interior_count();
        for _ in 0..10 {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let vaw = dot(&v, &a.apply(&w).unwrap());
            let wav = dot(&w, &a.apply(&v).unwrap());
            assert!((vaw - wav).abs() <= 1e-12 * vaw.abs().max(wav.abs()));
        }
        assert!(a.apply(&vec![0.0; n]).unwrap().iter().all(|&x| x == 0.0));
    }
}
