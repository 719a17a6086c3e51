//! Enriched Galerkin function space: continuous P1 plus one constant per
//! element.
//!
//! An [`EGFunction`] stores nodal values for every mesh vertex (so the
//! Dirichlet lift and the discrete solution share one representation) and one
//! value per element. The [`DofMap`] picks out the interior vertices, which
//! carry the unknowns of the zero-trace linear space.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};

/// A scalar field on the closure of the domain.
pub type Field = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Tolerance on barycentric coordinates when testing point membership.
pub const BARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EGFunction {
    /// Nodal values of the continuous part, one per vertex.
    pub linear: Vec<f64>,
    /// Element constants, one per element.
    pub constant: Vec<f64>,
}

impl EGFunction {
    pub fn zeros(mesh: &Mesh) -> Self {
        EGFunction {
            linear: vec![0.0; mesh.n_vertices()],
            constant: vec![0.0; mesh.n_elements()],
        }
    }

    pub fn new(mesh: &Mesh, linear: Vec<f64>, constant: Vec<f64>) -> Result<Self> {
        if linear.len() != mesh.n_vertices() || constant.len() != mesh.n_elements() {
            return Err(Error::invalid(format!(
                "EG function sizes ({}, {}) do not match mesh ({}, {})",
                linear.len(),
                constant.len(),
                mesh.n_vertices(),
                mesh.n_elements()
            )));
        }
        Ok(EGFunction { linear, constant })
    }

    pub fn add(&self, other: &EGFunction) -> EGFunction {
        EGFunction {
            linear: self.linear.iter().zip(&other.linear).map(|(a, b)| a + b).collect(),
            constant: self.constant.iter().zip(&other.constant).map(|(a, b)| a + b).collect(),
        }
    }

    /// Value at local vertex `k` of element `t`.
    pub fn vertex_value(&self, mesh: &Mesh, t: usize, k: usize) -> f64 {
        self.linear[mesh.triangle(t)[k]] + self.constant[t]
    }

    /// Serialize as CSV with header `kind,index,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "kind,index,value")?;
        for (i, v) in self.linear.iter().enumerate() {
            writeln!(w, "vertex,{i},{v:.16e}")?;
        }
        for (i, v) in self.constant.iter().enumerate() {
            writeln!(w, "element,{i},{v:.16e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mesh: &Mesh, r: R) -> Result<Self> {
        let mut out = EGFunction::zeros(mesh);
        let mut seen_v = vec![false; mesh.n_vertices()];
        let mut seen_e = vec![false; mesh.n_elements()];
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            if i == 0 {
                if line.trim() != "kind,index,value" {
                    return Err(Error::Parse { line: 1, msg: format!("unexpected header `{line}`") });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
            let mut it = line.split(',');
            let (Some(kind), Some(idx), Some(val), None) = (it.next(), it.next(), it.next(), it.next()) else {
                return Err(bad("expected three columns"));
            };
            let idx: usize = idx.trim().parse().map_err(|_| bad("bad index"))?;
            let val: f64 = val.trim().parse().map_err(|_| bad("bad value"))?;
            let (slot, seen) = match kind.trim() {
                "vertex" => (out.linear.get_mut(idx), seen_v.get_mut(idx)),
                "element" => (out.constant.get_mut(idx), seen_e.get_mut(idx)),
                _ => return Err(bad("kind must be `vertex` or `element`")),
            };
            match (slot, seen) {
                (Some(s), Some(flag)) => {
                    *s = val;
                    *flag = true;
                }
                _ => return Err(bad("index out of range")),
            }
        }
        if seen_v.iter().chain(&seen_e).any(|s| !s) {
            return Err(Error::Parse { line: 0, msg: "missing coefficients".into() });
        }
        Ok(out)
    }
}

/// Degree-of-freedom numbering for the zero-trace linear space and the
/// element constants.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    interior: Vec<usize>,
    vertex_dof: Vec<Option<usize>>,
    n_elements: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        let interior: Vec<usize> = (0..mesh.n_vertices()).filter(|&v| !mesh.is_boundary_vertex(v)).collect();
        let mut vertex_dof = vec![None; mesh.n_vertices()];
        for (d, &v) in interior.iter().enumerate() {
            vertex_dof[v] = Some(d);
        }
        DofMap {
            interior,
            vertex_dof,
            n_elements: mesh.n_elements(),
        }
    }

    /// Dimension of the zero-trace linear space.
    pub fn n_linear(&self) -> usize {
        self.interior.len()
    }

    pub fn n_const(&self) -> usize {
        self.n_elements
    }

    pub fn n_total(&self) -> usize {
        self.n_linear() + self.n_const()
    }

    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior
    }

    pub fn vertex_of(&self, dof: usize) -> usize {
        self.interior[dof]
    }

    pub fn dof_of(&self, vertex: usize) -> Option<usize> {
        self.vertex_dof[vertex]
    }

    /// Interior nodal values of `f` in dof order.
    pub fn gather_linear(&self, f: &EGFunction) -> Vec<f64> {
        self.interior.iter().map(|&v| f.linear[v]).collect()
    }

    /// Per-vertex values from interior dof values, with `boundary` supplying
    /// the values at Dirichlet vertices.
    pub fn scatter_linear(&self, dofs: &[f64], boundary: &[f64]) -> Vec<f64> {
        let mut out = boundary.to_vec();
        for (d, &v) in self.interior.iter().enumerate() {
            out[v] = dofs[d];
        }
        out
    }
}

fn checked(value: f64, v: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NumericDomain(format!("non-finite field value {value} at vertex {v}")))
    }
}

/// Nodal interpolant of `g`; the constant part is zero.
pub fn interpolate_lagrange(mesh: &Mesh, g: impl Fn(f64, f64) -> f64) -> Result<EGFunction> {
    let linear = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(v, p)| checked(g(p[0], p[1]), v))
        .collect::<Result<Vec<_>>>()?;
    Ok(EGFunction {
        linear,
        constant: vec![0.0; mesh.n_elements()],
    })
}

/// Interpolate the boundary data and extend it by zero into the interior.
pub fn dirichlet_lift(mesh: &Mesh, u_d: impl Fn(f64, f64) -> f64) -> Result<EGFunction> {
    let linear = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(v, p)| {
            if mesh.is_boundary_vertex(v) {
                checked(u_d(p[0], p[1]), v)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EGFunction {
        linear,
        constant: vec![0.0; mesh.n_elements()],
    })
}

/// Point value of `f` restricted to element `t`.
pub fn evaluate(mesh: &Mesh, f: &EGFunction, t: usize, p: Point) -> Result<f64> {
    if t >= mesh.n_elements() {
        return Err(Error::invalid(format!("element index {t} out of range")));
    }
    let l = mesh.barycentric(t, p);
    if l.iter().any(|&x| x < -BARY_TOL) {
        return Err(Error::invalid(format!("point {p:?} lies outside element {t}")));
    }
    Ok(eval_bary(mesh, f, t, l))
}

pub(crate) fn eval_bary(mesh: &Mesh, f: &EGFunction, t: usize, l: [f64; 3]) -> f64 {
    let tri = mesh.triangle(t);
    l[0] * f.linear[tri[0]] + l[1] * f.linear[tri[1]] + l[2] * f.linear[tri[2]] + f.constant[t]
}

/// Gradient of the continuous part on element `t`.
pub fn linear_gradient(mesh: &Mesh, f: &EGFunction, t: usize) -> [f64; 2] {
    let g = mesh.barycentric_gradients(t);
    let tri = mesh.triangle(t);
    let mut out = [0.0; 2];
    for k in 0..3 {
        out[0] += f.linear[tri[k]] * g[k][0];
        out[1] += f.linear[tri[k]] * g[k][1];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const UNIT: [f64; 4] = [0.0, 0.0, 1.0, 1.0];

    #[test]
    fn interpolation_reproduces_constants_and_linears() {
        let m = Mesh::structured(1, 1, UNIT).unwrap();
        let one = interpolate_lagrange(&m, |_, _| 1.0).unwrap();
        assert!(one.linear.iter().all(|&v| v == 1.0));
        let x = interpolate_lagrange(&m, |x, _| x).unwrap();
        assert_eq!(x.linear, vec![0.0, 1.0, 0.0, 1.0]);
        assert!(x.constant.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn interpolation_rejects_non_finite() {
        let m = Mesh::structured(1, 1, UNIT).unwrap();
        let r = interpolate_lagrange(&m, |x, _| 1.0 / x);
        assert!(matches!(r, Err(Error::NumericDomain(_))));
    }

    #[test]
    fn affine_functions_exact_at_centroids() {
        let m = Mesh::structured(3, 4, [-1.0, 0.0, 1.0, 1.0]).unwrap();
        let g = |x: f64, y: f64| 0.3 - 2.0 * x + 1.25 * y;
        let f = interpolate_lagrange(&m, g).unwrap();
        for t in 0..m.n_elements() {
            let c = m.centroid(t);
            assert!((evaluate(&m, &f, t, c).unwrap() - g(c[0], c[1])).abs() < 1e-14);
        }
    }

    #[test]
    fn lift_examples() {
        let m = Mesh::structured(2, 2, UNIT).unwrap();
        let zero = dirichlet_lift(&m, |_, _| 0.0).unwrap();
        assert_eq!(zero, EGFunction::zeros(&m));
        let x = dirichlet_lift(&m, |x, _| x).unwrap();
        assert_eq!(x.linear[4], 0.0);
        for v in (0..9).filter(|&v| v != 4) {
            assert_eq!(x.linear[v], m.vertex(v)[0]);
        }
        let m1 = Mesh::structured(1, 1, UNIT).unwrap();
        assert!(dirichlet_lift(&m1, |_, _| 1.0).unwrap().linear.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn evaluation_examples() {
        let m = Mesh::structured(1, 1, UNIT).unwrap();
        let mut f = EGFunction::zeros(&m);
        f.constant[0] = 2.5;
        assert_eq!(evaluate(&m, &f, 0, [0.7, 0.2]).unwrap(), 2.5);

        let tri = m.triangle(0);
        f.linear[tri[0]] = 0.0;
        f.linear[tri[1]] = 3.0;
        f.linear[tri[2]] = 6.0;
        f.constant[0] = 1.0;
        assert!((evaluate(&m, &f, 0, m.centroid(0)).unwrap() - 4.0).abs() < 1e-14);
        let p = m.vertex(tri[1]);
        assert!((evaluate(&m, &f, 0, p).unwrap() - 4.0).abs() < 1e-14);
        assert!(matches!(evaluate(&m, &f, 0, [0.0, 1.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn dofmap_counts() {
        let m = Mesh::structured(4, 3, UNIT).unwrap();
        let d = DofMap::new(&m);
        assert_eq!(d.n_linear(), 3 * 2);
        assert_eq!(d.n_const(), 24);
        for (i, &v) in d.interior_vertices().iter().enumerate() {
            assert_eq!(d.dof_of(v), Some(i));
        }
        assert_eq!(d, DofMap::new(&m));
    }

    #[test]
    fn csv_round_trip() {
        let m = Mesh::structured(2, 2, UNIT).unwrap();
        let mut f = interpolate_lagrange(&m, |x, y| (x * 3.1).sin() + y / 7.0).unwrap();
        f.constant.iter_mut().enumerate().for_each(|(i, c)| *c = 1.0 / (i as f64 + 3.0));
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert_eq!(EGFunction::read_csv(&m, buf.as_slice()).unwrap(), f);
    }

    proptest! {
        #[test]
        fn evaluation_is_additive(
            a in proptest::collection::vec(-5.0f64..5.0, 9 + 8),
            b in proptest::collection::vec(-5.0f64..5.0, 9 + 8),
            l0 in 0.0f64..1.0, s in 0.0f64..1.0, t in 0usize..8,
        ) {
            let m = Mesh::structured(2, 2, UNIT).unwrap();
            let fa = EGFunction::new(&m, a[..9].to_vec(), a[9..].to_vec()).unwrap();
            let fb = EGFunction::new(&m, b[..9].to_vec(), b[9..].to_vec()).unwrap();
            let l1 = (1.0 - l0) * s;
            let p = m.map_point(t, [l0, l1, 1.0 - l0 - l1]);
            let sum = evaluate(&m, &fa.add(&fb), t, p).unwrap();
            let parts = evaluate(&m, &fa, t, p).unwrap() + evaluate(&m, &fb, t, p).unwrap();
            prop_assert!((sum - parts).abs() < 1e-13);
        }
    }
}
