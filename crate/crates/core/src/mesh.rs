//! Uniform Friedrichs–Keller triangulation of the unit square and nodal fields on it.
//!
//! Grid points are `(i·h, j·h)` for `0 ≤ i, j < n_h` with `h = 1/(n_h − 1)`.
//! Each cell is split along the diagonal from its bottom-left to its top-right
//! corner. Unknowns live on the `(n_h − 2)²` interior points, numbered row by row
//! (`x₁` varies fastest); boundary values are implicitly zero.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

/// Orientation of the diagonal splitting each grid cell into two triangles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Diagonal {
    BottomLeftToTopRight,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Mesh {
    n: usize,
}

impl Mesh {
    pub fn new(nodes_per_side: usize) -> Result<Self> {
        if nodes_per_side < 3 {
            return Err(Error::InvalidMesh(format!(
                "need at least 3 nodes per side for an interior node, got {nodes_per_side}"
            )));
        }
        Ok(Mesh { n: nodes_per_side })
    }

    pub fn nodes_per_side(&self) -> usize {
        self.n
    }

    pub fn diagonal(&self) -> Diagonal {
        Diagonal::BottomLeftToTopRight
    }

    pub fn h<T: Scalar>(&self) -> T {
        T::one() / T::from_usize(self.n - 1).expect("mesh size fits scalar")
    }

    /// Number of interior points per side.
    pub fn interior_side(&self) -> usize {
        self.n - 2
    }

    pub fn interior_count(&self) -> usize {
        self.interior_side() * self.interior_side()
    }

    pub fn node_count(&self) -> usize {
        self.n * self.n
    }

    /// Unknown index of grid point `(i, j)`, or `None` on the boundary.
    pub fn interior_index(&self, i: usize, j: usize) -> Option<usize> {
        let m = self.interior_side();
        if (1..=m).contains(&i) && (1..=m).contains(&j) {
            Some((j - 1) * m + (i - 1))
        } else {
            None
        }
    }

    /// Grid coordinates `(i, j)` of unknown `k`.
    pub fn grid_position(&self, k: usize) -> (usize, usize) {
        let m = self.interior_side();
        (k % m + 1, k / m + 1)
    }

    /// Physical coordinates of unknown `k`.
    pub fn point<T: Scalar>(&self, k: usize) -> (T, T) {
        let (i, j) = self.grid_position(k);
        self.grid_point(i, j)
    }

    pub fn grid_point<T: Scalar>(&self, i: usize, j: usize) -> (T, T) {
        let denom = T::from_usize(self.n - 1).expect("mesh size fits scalar");
        (
            T::from_usize(i).expect("index fits scalar") / denom,
            T::from_usize(j).expect("index fits scalar") / denom,
        )
    }

    /// Triangles as triples of grid points `(i, j)`, counter-clockwise.
    pub fn triangles(&self) -> impl Iterator<Item = [(usize, usize); 3]> + '_ {
        let cells = self.n - 1;
        (0..cells).flat_map(move |j| {
            (0..cells).flat_map(move |i| {
                [
                    [(i, j), (i + 1, j), (i + 1, j + 1)],
                    [(i, j), (i + 1, j + 1), (i, j + 1)],
                ]
            })
        })
    }
}

pub fn build_mesh(nodes_per_side: usize) -> Result<Mesh> {
    Mesh::new(nodes_per_side)
}

/// What a nodal field represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    State,
    Source,
    Data,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::State => "state",
            Role::Source => "source",
            Role::Data => "data",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "state" => Ok(Role::State),
            "source" => Ok(Role::Source),
            "data" => Ok(Role::Data),
            other => Err(Error::Parse(format!("unknown role `{other}`"))),
        }
    }
}

/// Values of a continuous piecewise linear function at the interior nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction<T> {
    mesh: Mesh,
    role: Role,
    values: Vec<T>,
}

impl<T: Scalar> GridFunction<T> {
    pub fn new(mesh: Mesh, role: Role, values: Vec<T>) -> Result<Self> {
        check_dim(mesh.interior_count(), values.len())?;
        Ok(GridFunction { mesh, role, values })
    }

    pub fn zeros(mesh: Mesh, role: Role) -> Self {
        GridFunction {
            mesh,
            role,
            values: vec![T::zero(); mesh.interior_count()],
        }
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Errors unless `other` lives on the same mesh.
    pub fn check_same_mesh(&self, other: &GridFunction<T>) -> Result<()> {
        if self.mesh != other.mesh {
            return Err(Error::InvalidInput(format!(
                "fields live on different meshes (n_h = {} vs {})",
                self.mesh.nodes_per_side(),
                other.mesh.nodes_per_side()
            )));
        }
        Ok(())
    }

    /// `self − other`, tagged with the role of `self`.
    pub fn sub(&self, other: &GridFunction<T>) -> Result<GridFunction<T>> {
        self.check_same_mesh(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(GridFunction {
            values,
            ..self.clone()
        })
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: T, other: &GridFunction<T>) -> Result<()> {
        self.check_same_mesh(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    /// Writes the CSV exchange format: a `n_h=<int>,role=<role>` header followed by
    /// one value per line in interior ordering, with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n_h={},role={}", self.mesh.nodes_per_side(), self.role)?;
        for v in &self.values {
            writeln!(w, "{:.16e}", v.as_f64())?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty grid function file".into()))??;
        let (mut n_h, mut role) = (None, None);
        for field in header.trim().split(',') {
            match field.split_once('=') {
                Some(("n_h", v)) => {
                    n_h = Some(
                        v.trim()
                            .parse::<usize>()
                            .map_err(|e| Error::Parse(format!("bad n_h `{v}`: {e}")))?,
                    )
                }
                Some(("role", v)) => role = Some(v.trim().parse::<Role>()?),
                _ => return Err(Error::Parse(format!("bad header field `{field}`"))),
            }
        }
        let mesh = Mesh::new(n_h.ok_or_else(|| Error::Parse("header lacks n_h".into()))?)?;
        let role = role.ok_or_else(|| Error::Parse("header lacks role".into()))?;
        let mut values = Vec::with_capacity(mesh.interior_count());
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let v: f64 = t
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: `{t}`: {e}", lineno + 2)))?;
            values.push(T::lit(v));
        }
        GridFunction::new(mesh, role, values)
    }
}

/// Samples `f` at every interior node.
pub fn interpolate<T, F>(mesh: &Mesh, role: Role, f: F) -> Result<GridFunction<T>>
where
    T: Scalar,
    F: Fn(T, T) -> T,
{
    let mut values = Vec::with_capacity(mesh.interior_count());
    for k in 0..mesh.interior_count() {
        let (x1, x2) = mesh.point::<T>(k);
        let v = f(x1, x2);
        if !v.is_finite() {
            return Err(Error::NonFiniteField {
                node: k,
                x1: x1.as_f64(),
                x2: x2.as_f64(),
                value: v.as_f64(),
            });
        }
        values.push(v);
    }
    GridFunction::new(*mesh, role, values)
}
