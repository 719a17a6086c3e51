//! Nodal truncation of the continuous part relative to patch extremes of the
//! element constants.
//!
//! For an interior vertex `x_i` with patch minimum `under_i` and maximum
//! `over_i` of the constants, the truncated nodal value is
//! `max(a - under_i, min(v(x_i), b - over_i))`. Dirichlet vertices are never
//! truncated.

use crate::fespace::{DofMap, EGFunction};
use crate::mesh::Mesh;
use crate::par;

/// Patch minima and maxima of an element vector, one entry per interior dof.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchExtremes {
    pub under: Vec<f64>,
    pub over: Vec<f64>,
}

pub fn patch_extremes(mesh: &Mesh, dofs: &DofMap, w0: &[f64]) -> PatchExtremes {
    assert_eq!(w0.len(), mesh.n_elements(), "constant vector length");
    let pairs = par::map_range(dofs.n_linear(), |d| {
        let patch = &mesh.node_patches()[dofs.vertex_of(d)];
        patch
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(w0[t]), hi.max(w0[t])))
    });
    let (under, over) = pairs.into_iter().unzip();
    PatchExtremes { under, over }
}

/// `max(a - under, min(v, b - over))`. The lower clamp wins when the
/// interval is empty.
#[inline]
pub fn truncate_node(v: f64, under: f64, over: f64, bounds: [f64; 2]) -> f64 {
    (bounds[0] - under).max(v.min(bounds[1] - over))
}

/// Truncation operator for a frozen constant part.
#[derive(Debug, Clone)]
pub struct Limiter {
    pub extremes: PatchExtremes,
    pub bounds: [f64; 2],
}

impl Limiter {
    pub fn new(mesh: &Mesh, dofs: &DofMap, w0: &[f64], bounds: [f64; 2]) -> Self {
        Limiter { extremes: patch_extremes(mesh, dofs, w0), bounds }
    }

    /// Truncated interior nodal values.
    pub fn p(&self, v1: &[f64]) -> Vec<f64> {
        let e = &self.extremes;
        par::map_range(v1.len(), |i| truncate_node(v1[i], e.under[i], e.over[i], self.bounds))
    }

    /// `v1 - p(v1)`.
    pub fn q(&self, v1: &[f64]) -> Vec<f64> {
        self.p(v1).iter().zip(v1).map(|(p, v)| v - p).collect()
    }

    pub fn feasibility(&self) -> Feasibility {
        feasibility_check(&self.extremes, self.bounds)
    }
}

/// `P^{w0}(v)` on full EG functions: truncated linear part at interior
/// vertices, boundary values copied, constant part replaced by `w0`.
pub fn apply_p(mesh: &Mesh, dofs: &DofMap, w0: &[f64], v: &EGFunction, bounds: [f64; 2]) -> EGFunction {
    let lim = Limiter::new(mesh, dofs, w0, bounds);
    let p = lim.p(&dofs.gather_linear(v));
    EGFunction {
        linear: dofs.scatter_linear(&p, &v.linear),
        constant: w0.to_vec(),
    }
}

/// `Q^{w0}(v) = v^1 - [P^{w0}(v)]^1`; zero at boundary vertices and in the
/// constant part.
pub fn apply_q(mesh: &Mesh, dofs: &DofMap, w0: &[f64], v: &EGFunction, bounds: [f64; 2]) -> EGFunction {
    let lim = Limiter::new(mesh, dofs, w0, bounds);
    let q = lim.q(&dofs.gather_linear(v));
    EGFunction {
        linear: dofs.scatter_linear(&q, &vec![0.0; mesh.n_vertices()]),
        constant: vec![0.0; mesh.n_elements()],
    }
}

/// Outcome of the sufficient condition `a - under_i <= b - over_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    pub violations: usize,
    /// Interior dof with the smallest slack, if any.
    pub worst_dof: Option<usize>,
    /// `(b - over) - (a - under)` at `worst_dof`.
    pub worst_slack: f64,
}

pub fn feasibility_check(ext: &PatchExtremes, bounds: [f64; 2]) -> Feasibility {
    let [a, b] = bounds;
    let mut out = Feasibility { feasible: true, violations: 0, worst_dof: None, worst_slack: f64::INFINITY };
    for (i, (u, o)) in ext.under.iter().zip(&ext.over).enumerate() {
        let slack = (b - o) - (a - u);
        if slack < 0.0 {
            out.violations += 1;
            out.feasible = false;
        }
        if slack < out.worst_slack {
            out.worst_slack = slack;
            out.worst_dof = Some(i);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const UNIT: [f64; 4] = [0.0, 0.0, 1.0, 1.0];
    const AB: [f64; 2] = [0.0, 1.0];

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_node(0.5, 0.0, 0.0, AB), 0.5);
        assert!((truncate_node(1.0, -0.1, 0.2, AB) - 0.8).abs() < 1e-15);
        assert_eq!(truncate_node(-3.0, 0.0, 0.0, AB), 0.0);
        // empty interval: the lower clamp wins
        assert_eq!(truncate_node(0.5, -1.0, 1.0, AB), 1.0);
    }

    #[test]
    fn extremes_match_brute_force() {
        let m = Mesh::structured(4, 4, UNIT).unwrap();
        let d = DofMap::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w0: Vec<f64> = (0..m.n_elements()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e = patch_extremes(&m, &d, &w0);
        for (i, &v) in d.interior_vertices().iter().enumerate() {
            let touching: Vec<f64> = (0..m.n_elements()).filter(|&t| m.triangle(t).contains(&v)).map(|t| w0[t]).collect();
            assert_eq!(e.under[i], touching.iter().cloned().fold(f64::INFINITY, f64::min));
            assert_eq!(e.over[i], touching.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        let z = patch_extremes(&m, &d, &vec![0.3; m.n_elements()]);
        assert!(z.under.iter().chain(&z.over).all(|&v| v == 0.3));
    }

    #[test]
    fn p_and_q_examples() {
        let m = Mesh::structured(2, 2, UNIT).unwrap();
        let d = DofMap::new(&m);
        let w0 = vec![0.0; 8];
        let mut v = EGFunction::zeros(&m);
        v.linear[4] = 1.5;
        v.constant = vec![9.0; 8];
        let p = apply_p(&m, &d, &w0, &v, AB);
        let q = apply_q(&m, &d, &w0, &v, AB);
        assert_eq!(p.linear[4], 1.0);
        assert_eq!(p.constant, w0);
        assert_eq!(q.linear[4], 0.5);
        assert!(q.constant.iter().all(|&c| c == 0.0));
        v.linear[4] = 0.25;
        assert_eq!(apply_p(&m, &d, &w0, &v, AB).linear, v.linear);
        assert!(apply_q(&m, &d, &w0, &v, AB).linear.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn boundary_values_are_not_truncated() {
        let m = Mesh::structured(2, 2, UNIT).unwrap();
        let d = DofMap::new(&m);
        let mut v = EGFunction::zeros(&m);
        v.linear[0] = 5.0;
        let p = apply_p(&m, &d, &vec![0.0; 8], &v, AB);
        assert_eq!(p.linear[0], 5.0);
    }

    #[test]
    fn feasibility_examples() {
        let m = Mesh::structured(3, 3, UNIT).unwrap();
        let d = DofMap::new(&m);
        let lim = Limiter::new(&m, &d, &vec![0.0; m.n_elements()], AB);
        assert!(lim.feasibility().feasible);
        let mut w0 = vec![0.0; m.n_elements()];
        let v = d.vertex_of(0);
        let patch = m.node_patch(v).unwrap();
        w0[patch[0]] = -1.0;
        w0[patch[1]] = 1.0;
        let f = Limiter::new(&m, &d, &w0, AB).feasibility();
        assert!(!f.feasible);
        assert_eq!(f.worst_dof, Some(0));
        assert_eq!(f.worst_slack, -1.0);
    }
}
