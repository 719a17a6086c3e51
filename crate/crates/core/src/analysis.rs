//! Error and jump norms, convergence rates, comparison bounds, condition
//! numbers and conservation / bound diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::assembly::{jump_matrix, ProblemSpec};
use crate::error::{Error, Result};
use crate::fespace::{eval_bary, linear_gradient, EGFunction};
use crate::mesh::Mesh;
use crate::par;
use crate::quadrature::{DUNAVANT4, GAUSS2};
use crate::sparse::{CsrMatrix, SkylineCholesky};

/// `||u - uh||_0`, constant part of `uh` included.
pub fn error_l2(mesh: &Mesh, u: impl Fn(f64, f64) -> f64 + Sync + Send, uh: &EGFunction) -> f64 {
    par::sum_range(mesh.n_elements(), |t| {
        let area = mesh.area(t);
        DUNAVANT4
            .points
            .iter()
            .zip(DUNAVANT4.weights)
            .map(|(l, w)| {
                let p = mesh.map_point(t, *l);
                let e = u(p[0], p[1]) - eval_bary(mesh, uh, t, *l);
                w * area * e * e
            })
            .sum::<f64>()
    })
    .sqrt()
}

/// `||grad u - grad uh^1||_0` element by element; constants have no gradient.
pub fn error_h1_linear(mesh: &Mesh, grad: impl Fn(f64, f64) -> [f64; 2] + Sync + Send, uh: &EGFunction) -> f64 {
    par::sum_range(mesh.n_elements(), |t| {
        let area = mesh.area(t);
        let gh = linear_gradient(mesh, uh, t);
        DUNAVANT4
            .points
            .iter()
            .zip(DUNAVANT4.weights)
            .map(|(l, w)| {
                let p = mesh.map_point(t, *l);
                let g = grad(p[0], p[1]);
                let (ex, ey) = (g[0] - gh[0], g[1] - gh[1]);
                w * area * (ex * ex + ey * ey)
            })
            .sum::<f64>()
    })
    .sqrt()
}

/// `(sum_F (eps + mu h_F^2)/h_F ||[v0]||_F^2)^{1/2}`, boundary facets
/// included.
pub fn jump_norm(mesh: &Mesh, spec: &ProblemSpec, v0: &[f64]) -> f64 {
    let facets = mesh.facets();
    par::sum_range(facets.len(), |f| {
        let facet = &facets[f];
        let jump = v0[facet.left] - facet.right.map_or(0.0, |r| v0[r]);
        let h = facet.length;
        (spec.epsilon + spec.mu * h * h) / h * h * jump * jump
    })
    .sqrt()
}

/// Interior-facet part of the jump norm of the traces of a full EG
/// function, integrated with two-point Gauss; zero for continuous functions.
pub fn interior_jump_norm(mesh: &Mesh, v: &EGFunction) -> f64 {
    let facets = mesh.facets();
    par::sum_range(facets.len(), |f| {
        let facet = &facets[f];
        let Some(r) = facet.right else { return 0.0 };
        let [pa, pb] = facet.vertices.map(|v| mesh.vertex(v));
        GAUSS2
            .iter()
            .map(|(s, w)| {
                let p = [(1.0 - s) * pa[0] + s * pb[0], (1.0 - s) * pa[1] + s * pb[1]];
                let jl = eval_bary(mesh, v, facet.left, mesh.barycentric(facet.left, p));
                let jr = eval_bary(mesh, v, r, mesh.barycentric(r, p));
                w * facet.length * (jl - jr).powi(2) / facet.length
            })
            .sum::<f64>()
    })
    .sqrt()
}

/// `log2(coarse / fine)`; `None` when either error is not positive.
pub fn eoc(coarse: f64, fine: f64) -> Option<f64> {
    (coarse > 0.0 && fine > 0.0 && coarse.is_finite() && fine.is_finite()).then(|| (coarse / fine).log2())
}

/// Rate `p` in `value ~ h^p` between the two finest entries (positive for
/// decay, negative for growth).
pub fn fitted_rate(h: &[f64], values: &[f64]) -> Option<f64> {
    let n = h.len().min(values.len());
    if n < 2 {
        return None;
    }
    let (h0, h1, v0, v1) = (h[n - 2], h[n - 1], values[n - 2], values[n - 1]);
    (h0 > 0.0 && h1 > 0.0 && v0 > 0.0 && v1 > 0.0 && h0 != h1).then(|| (v0 / v1).ln() / (h0 / h1).ln())
}

/// Invariant interval from the comparison principle given samples of `f`
/// and `u_D`.
pub fn comparison_bound_from_samples(f: &[f64], u_d: &[f64], mu: f64) -> [f64; 2] {
    let sup = |s: &[f64]| s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bound = (sup(f) / mu).max(sup(u_d));
    let non_negative = f.iter().chain(u_d).all(|&v| v >= 0.0);
    if non_negative {
        [0.0, bound]
    } else {
        [-bound, bound]
    }
}

/// Comparison bound with `f` sampled at the degree-4 quadrature points and
/// `u_D` at boundary vertices and boundary-facet Gauss points of `mesh`.
pub fn comparison_bound(mesh: &Mesh, spec: &ProblemSpec) -> [f64; 2] {
    let mut fs = Vec::with_capacity(mesh.n_elements() * DUNAVANT4.points.len());
    for t in 0..mesh.n_elements() {
        for l in DUNAVANT4.points {
            let p = mesh.map_point(t, *l);
            fs.push((spec.f)(p[0], p[1]));
        }
    }
    let mut ud = Vec::new();
    for (v, p) in mesh.vertices().iter().enumerate() {
        if mesh.is_boundary_vertex(v) {
            ud.push((spec.u_d)(p[0], p[1]));
        }
    }
    for facet in mesh.facets().iter().filter(|f| f.is_boundary()) {
        let [pa, pb] = facet.vertices.map(|v| mesh.vertex(v));
        for (s, _) in GAUSS2 {
            ud.push((spec.u_d)((1.0 - s) * pa[0] + s * pb[0], (1.0 - s) * pa[1] + s * pb[1]));
        }
    }
    comparison_bound_from_samples(&fs, &ud, spec.mu)
}

/// Systems below this size use a dense eigendecomposition.
pub const DENSE_EIG_LIMIT: usize = 2000;

/// Spectral condition number `max |lambda| / min |lambda|` of a symmetric
/// matrix; equals `lambda_max / lambda_min` when it is positive definite.
pub fn condition_number(a: &CsrMatrix) -> Result<f64> {
    let n = a.n_rows();
    if n == 0 || a.n_cols() != n {
        return Err(Error::invalid("condition number needs a non-empty square matrix"));
    }
    let (lo, hi) = if n < DENSE_EIG_LIMIT {
        let eig = SymmetricEigen::new(a.to_dense());
        let lo = eig.eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let hi = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
        (lo, hi)
    } else {
        let hi = lanczos_largest(n, |x| a.mul_vec(x)).abs();
        let inv = match SkylineCholesky::factor(a) {
            Some(chol) => lanczos_largest(n, |x| chol.solve(x)),
            None => {
                // indefinite: shift-invert through a dense LU instead
                let lu = a.to_dense().lu();
                if !lu.is_invertible() {
                    return Err(Error::Singular("shift-invert factorization failed".into()));
                }
                lanczos_largest(n, |x| {
                    let b = DVector::from_column_slice(x);
                    lu.solve(&b).map(|v| v.as_slice().to_vec()).unwrap_or_else(|| vec![f64::NAN; n])
                })
            }
        };
        (1.0 / inv.abs(), hi)
    };
    if !(lo > hi * 1e-15) {
        return Err(Error::Singular(format!("smallest |eigenvalue| {lo:e} against largest {hi:e}")));
    }
    Ok(hi / lo)
}

/// Eigenvalue of largest magnitude of a symmetric operator by Lanczos with full
/// reorthogonalization. Deterministic start vector.
pub fn lanczos_largest(n: usize, op: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    const TOL: f64 = 1e-10;
    let max_steps = n.min(400);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(max_steps + 1);
    let start: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).fract()).collect();
    let norm = par::norm2(&start);
    q.push(start.iter().map(|v| v / norm).collect());
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut theta = 0.0;
    for k in 0..max_steps {
        let mut w = op(&q[k]);
        let a = par::dot(&w, &q[k]);
        alpha.push(a);
        // two passes of classical Gram-Schmidt against all previous vectors
        for _ in 0..2 {
            for qj in &q {
                let c = par::dot(&w, qj);
                par::axpy(-c, qj, &mut w);
            }
        }
        let b = par::norm2(&w);
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j || j + 1 == i {
                beta[i.min(j)]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let (imax, &th) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .expect("non-empty tridiagonal");
        theta = th;
        let resid = (b * eig.eigenvectors[(m - 1, imax)]).abs();
        if resid <= TOL * th.abs() || b <= f64::EPSILON * th.abs() || k + 1 == max_steps {
            break;
        }
        beta.push(b);
        q.push(w.iter().map(|v| v / b).collect());
    }
    theta
}

/// Per-vertex extremes of an EG function and the number of vertex values
/// outside `bounds` by more than `tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub min_val: f64,
    pub max_val: f64,
    pub violations: usize,
}

pub fn bound_violation(mesh: &Mesh, v: &EGFunction, bounds: [f64; 2], tol: f64) -> BoundReport {
    let mut out = BoundReport { min_val: f64::INFINITY, max_val: f64::NEG_INFINITY, violations: 0 };
    for t in 0..mesh.n_elements() {
        for k in 0..3 {
            let x = v.vertex_value(mesh, t, k);
            out.min_val = out.min_val.min(x);
            out.max_val = out.max_val.max(x);
            if x < bounds[0] - tol || x > bounds[1] + tol {
                out.violations += 1;
            }
        }
    }
    out
}

/// `sup ||v0||_0 / (sum_F h_F^{-1} ||[v0]||_F^2)^{1/2}` over element
/// constants, from the generalized eigenproblem of mass and jump matrices.
pub fn broken_poincare_constant(mesh: &Mesh) -> Result<f64> {
    let j = jump_matrix(mesh, |f| 1.0 / mesh.facets()[f].length).to_dense();
    let s: Vec<f64> = mesh.areas().iter().map(|a| 1.0 / a.sqrt()).collect();
    let n = mesh.n_elements();
    let b = DMatrix::from_fn(n, n, |r, c| s[r] * j[(r, c)] * s[c]);
    let lo = SymmetricEigen::new(b).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(lo > 0.0) {
        return Err(Error::Singular("jump form is not definite on element constants".into()));
    }
    Ok(1.0 / lo.sqrt())
}

/// The ratio bounded by [`broken_poincare_constant`] for one vector.
pub fn poincare_ratio(mesh: &Mesh, v0: &[f64]) -> f64 {
    let l2: f64 = v0.iter().zip(mesh.areas()).map(|(v, a)| a * v * v).sum();
    let jumps: f64 = mesh
        .facets()
        .iter()
        .map(|f| {
            let d = v0[f.left] - f.right.map_or(0.0, |r| v0[r]);
            d * d
        })
        .sum();
    (l2 / jumps).sqrt()
}

/// Everything reported for one refinement level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelRecord {
    pub n_elements: usize,
    pub h: f64,
    pub err_l2: f64,
    pub err_h1: f64,
    pub jump_norm: f64,
    pub const_l2: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub inner_capped: usize,
    pub min_val: f64,
    pub max_val: f64,
    pub max_conservation_residual: f64,
    pub rhs_norm: f64,
    pub nonlinear_residual: f64,
    pub feasibility_violations: usize,
    pub converged: bool,
    pub cond_a: Option<f64>,
    pub cond_a1: Option<f64>,
    pub cond_a0: Option<f64>,
    pub seconds: f64,
}
