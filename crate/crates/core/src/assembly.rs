//! Assembly of the over-penalized interior-penalty form, the nodal
//! stabilizer and the right-hand side.
//!
//! The full operator is first assembled on the broken space spanned by every
//! vertex hat (boundary hats included, so the Dirichlet lift can act through
//! it) and every element indicator; the blocks on the unknowns are then
//! extracted through the [`DofMap`].
//!
//! Reduction order: element contributions in element order, then facet
//! contributions in facet order. Local matrices are computed in parallel and
//! scattered sequentially, so the assembled matrices do not depend on the
//! thread count.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fespace::{DofMap, EGFunction, Field};
use crate::mesh::Mesh;
use crate::par;
use crate::quadrature::{TriRule, CENTROID, DUNAVANT4, GAUSS2};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// Weighting of the facet penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PenaltyWeight {
    /// `gamma (eps + mu h_F^2) / h_F^beta`
    #[default]
    DiffusionReaction,
    /// `gamma eps / h_F^beta`, the plain interior-penalty scaling.
    DiffusionOnly,
}

/// How `(f, v)` is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SourceRule {
    /// Six-point degree-4 rule, for smooth sources.
    #[default]
    Dunavant4,
    /// Centroid value times the exact basis integral, for sources that are
    /// piecewise constant on a mesh aligned with their discontinuities.
    Centroid,
}

/// Coefficients, data and algorithm parameters of one problem.
#[derive(Clone)]
pub struct ProblemSpec {
    pub epsilon: f64,
    pub mu: f64,
    pub gamma: f64,
    pub beta: u32,
    pub alpha: f64,
    pub omega: f64,
    /// Invariant interval `[a, b]`.
    pub bounds: [f64; 2],
    pub f: Field,
    pub source_rule: SourceRule,
    pub u_d: Field,
    pub tol_inner: f64,
    pub tol_outer: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub penalty: PenaltyWeight,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("epsilon", &self.epsilon)
            .field("mu", &self.mu)
            .field("gamma", &self.gamma)
            .field("beta", &self.beta)
            .field("alpha", &self.alpha)
            .field("omega", &self.omega)
            .field("bounds", &self.bounds)
            .field("source_rule", &self.source_rule)
            .field("tol_inner", &self.tol_inner)
            .field("tol_outer", &self.tol_outer)
            .field("max_inner", &self.max_inner)
            .field("max_outer", &self.max_outer)
            .field("penalty", &self.penalty)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// A validated spec with the default penalty and solver parameters
    /// (`gamma = 10`, `beta = 4`, `alpha = 1`, `omega = 0.5`, bounds `[0, 1]`).
    pub fn new(epsilon: f64, mu: f64, f: Field, u_d: Field) -> Result<Self> {
        let spec = ProblemSpec {
            epsilon,
            mu,
            gamma: 10.0,
            beta: 4,
            alpha: 1.0,
            omega: 0.5,
            bounds: [0.0, 1.0],
            f,
            source_rule: SourceRule::Dunavant4,
            u_d,
            tol_inner: 1e-9,
            tol_outer: 1e-12,
            max_inner: 1000,
            max_outer: 100,
            penalty: PenaltyWeight::DiffusionReaction,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Homogeneous data: `f = 0`, `u_D = 0`.
    pub fn homogeneous(epsilon: f64, mu: f64) -> Result<Self> {
        Self::new(epsilon, mu, Arc::new(|_, _| 0.0), Arc::new(|_, _| 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("mu", self.mu)?;
        positive("gamma", self.gamma)?;
        positive("tol_inner", self.tol_inner)?;
        positive("tol_outer", self.tol_outer)?;
        if self.beta < 1 {
            return Err(Error::invalid("beta must be at least 1"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::invalid(format!("omega must lie in (0, 1], got {}", self.omega)));
        }
        let [a, b] = self.bounds;
        if !(a.is_finite() && b.is_finite() && a <= b) {
            return Err(Error::invalid(format!("bounds must satisfy a <= b, got [{a}, {b}]")));
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return Err(Error::invalid("iteration caps must be positive"));
        }
        Ok(())
    }

    /// Facet penalty coefficient for a facet of length `h_f`.
    pub fn penalty_weight(&self, h_f: f64) -> f64 {
        let scale = match self.penalty {
            PenaltyWeight::DiffusionReaction => self.epsilon + self.mu * h_f * h_f,
            PenaltyWeight::DiffusionOnly => self.epsilon,
        };
        self.gamma * scale / h_f.powi(self.beta as i32)
    }
}

/// Blocks of the bilinear form on the unknowns.
#[derive(Debug, Clone)]
pub struct OperatorBlocks {
    /// linear x linear
    pub a11: CsrMatrix,
    /// linear rows x constant columns
    pub a10: CsrMatrix,
    /// transpose of `a10`
    pub a01: CsrMatrix,
    /// constant x constant
    pub a00: CsrMatrix,
}

impl OperatorBlocks {
    /// The monolithic matrix `[[A11, A10], [A01, A00]]`.
    pub fn monolithic(&self) -> CsrMatrix {
        let n1 = self.a11.n_rows();
        let n0 = self.a00.n_rows();
        let mut b = TripletBuilder::new(n1 + n0, n1 + n0);
        for r in 0..n1 {
            for (c, v) in self.a11.row(r) {
                b.push(r, c, v);
            }
            for (c, v) in self.a10.row(r) {
                b.push(r, n1 + c, v);
            }
        }
        for r in 0..n0 {
            for (c, v) in self.a01.row(r) {
                b.push(n1 + r, c, v);
            }
            for (c, v) in self.a00.row(r) {
                b.push(n1 + r, n1 + c, v);
            }
        }
        b.build()
    }
}

/// Everything the solvers need for one mesh and problem.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub ops: OperatorBlocks,
    /// Diagonal of the nodal stabilizer on the interior dofs.
    pub s1: Vec<f64>,
    pub b1: Vec<f64>,
    pub b0: Vec<f64>,
    /// P1 mass matrix on the interior dofs (for L2 norms of linear parts).
    pub m11: CsrMatrix,
    /// Element areas (the diagonal mass matrix of the constants).
    pub m0: Vec<f64>,
    /// Dirichlet lift, zero at interior vertices.
    pub lift: EGFunction,
}

impl BlockSystem {
    pub fn rhs_norm(&self) -> f64 {
        (par::dot(&self.b1, &self.b1) + par::dot(&self.b0, &self.b0)).sqrt()
    }

    /// L2 norm of a linear-part dof vector.
    pub fn l2_linear(&self, v: &[f64]) -> f64 {
        par::dot(v, &self.m11.mul_vec(v)).max(0.0).sqrt()
    }

    /// L2 norm of an element-constant vector.
    pub fn l2_const(&self, v: &[f64]) -> f64 {
        par::sum_range(v.len(), |i| self.m0[i] * v[i] * v[i]).sqrt()
    }
}

/// Global index of element `t` in the broken operator.
fn elem_index(mesh: &Mesh, t: usize) -> usize {
    mesh.n_vertices() + t
}

type Local = (Vec<usize>, Vec<f64>);

fn element_local(mesh: &Mesh, spec: &ProblemSpec, t: usize) -> Local {
    let tri = mesh.triangle(t);
    let area = mesh.area(t);
    let g = mesh.barycentric_gradients(t);
    let idx = vec![tri[0], tri[1], tri[2], elem_index(mesh, t)];
    let mut k = vec![0.0; 16];
    for a in 0..3 {
        for b in a..3 {
            let stiff = spec.epsilon * area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            let mass = spec.mu * area / 12.0 * if a == b { 2.0 } else { 1.0 };
            k[a * 4 + b] = stiff + mass;
            k[b * 4 + a] = k[a * 4 + b];
        }
        k[a * 4 + 3] = spec.mu * area / 3.0;
        k[3 * 4 + a] = k[a * 4 + 3];
    }
    k[15] = spec.mu * area;
    (idx, k)
}

/// Traces of one local function on a facet: value on each side at the two
/// Gauss points and the normal component of its gradient on each side.
struct Trace {
    left: [f64; 2],
    right: [f64; 2],
    grad_n_left: f64,
    grad_n_right: f64,
}

fn facet_local(mesh: &Mesh, spec: &ProblemSpec, f: usize, penalty_factor: f64) -> Local {
    let facet = &mesh.facets()[f];
    let [pa, pb] = facet.vertices.map(|v| mesh.vertex(v));
    let n = facet.normal;
    let pts: [[f64; 2]; 2] = GAUSS2.map(|(s, _)| [(1.0 - s) * pa[0] + s * pb[0], (1.0 - s) * pa[1] + s * pb[1]]);
    let sides: Vec<usize> = std::iter::once(facet.left).chain(facet.right).collect();

    let mut idx: Vec<usize> = Vec::with_capacity(6);
    for &t in &sides {
        for v in mesh.triangle(t) {
            if !idx.contains(&v) {
                idx.push(v);
            }
        }
    }
    let n_hats = idx.len();
    idx.extend(sides.iter().map(|&t| elem_index(mesh, t)));

    let side_trace = |t: usize, v: usize| -> ([f64; 2], f64) {
        match mesh.local_index(t, v) {
            Some(k) => {
                let g = mesh.barycentric_gradients(t)[k];
                let vals = pts.map(|p| mesh.barycentric(t, p)[k]);
                (vals, g[0] * n[0] + g[1] * n[1])
            }
            None => ([0.0; 2], 0.0),
        }
    };
    let mut traces: Vec<Trace> = Vec::with_capacity(idx.len());
    for &v in &idx[..n_hats] {
        let (left, gl) = side_trace(facet.left, v);
        let (right, gr) = facet.right.map(|r| side_trace(r, v)).unwrap_or(([0.0; 2], 0.0));
        traces.push(Trace { left, right, grad_n_left: gl, grad_n_right: gr });
    }
    traces.push(Trace { left: [1.0; 2], right: [0.0; 2], grad_n_left: 0.0, grad_n_right: 0.0 });
    if facet.right.is_some() {
        traces.push(Trace { left: [0.0; 2], right: [1.0; 2], grad_n_left: 0.0, grad_n_right: 0.0 });
    }

    let boundary = facet.is_boundary();
    // jump (scalar factor of the normal) and eps * {grad} . n at each Gauss point
    let data: Vec<([f64; 2], f64)> = traces
        .iter()
        .map(|tr| {
            let jump = [tr.left[0] - tr.right[0], tr.left[1] - tr.right[1]];
            let avg = if boundary { tr.grad_n_left } else { 0.5 * (tr.grad_n_left + tr.grad_n_right) };
            (jump, spec.epsilon * avg)
        })
        .collect();

    let m = idx.len();
    let pen = penalty_factor * spec.penalty_weight(facet.length);
    let mut k = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            let (ji, gi) = data[i];
            let (jj, gj) = data[j];
            let mut s = 0.0;
            for (q, (_, w)) in GAUSS2.iter().enumerate() {
                s += w * (-gj * ji[q] - gi * jj[q] + pen * ji[q] * jj[q]);
            }
            k[i * m + j] = s * facet.length;
            k[j * m + i] = k[i * m + j];
        }
    }
    (idx, k)
}

fn scatter(builder: &mut TripletBuilder, locals: Vec<Local>) {
    for (idx, k) in locals {
        let m = idx.len();
        for i in 0..m {
            for j in 0..m {
                builder.push(idx[i], idx[j], k[i * m + j]);
            }
        }
    }
}

fn assemble_broken(mesh: &Mesh, spec: &ProblemSpec, penalty_factor: f64) -> CsrMatrix {
    let n = mesh.n_vertices() + mesh.n_elements();
    let mut b = TripletBuilder::new(n, n);
    let elems = par::map_range(mesh.n_elements(), |t| element_local(mesh, spec, t));
    scatter(&mut b, elems);
    let facets = par::map_range(mesh.n_facets(), |f| facet_local(mesh, spec, f, penalty_factor));
    scatter(&mut b, facets);
    b.build()
}

/// The bilinear form on the broken space of all vertex hats and element
/// indicators (vertices first, then elements).
pub fn assemble_full(mesh: &Mesh, spec: &ProblemSpec) -> Result<CsrMatrix> {
    spec.validate()?;
    Ok(assemble_broken(mesh, spec, 1.0))
}

/// Penalty part of the full operator alone (consistency and volume terms
/// removed), scaled by `factor`. Used to check the gamma scaling.
pub fn assemble_full_penalty_only(mesh: &Mesh, spec: &ProblemSpec) -> Result<CsrMatrix> {
    let with = assemble_full(mesh, spec)?;
    let mut zero_pen = spec.clone();
    zero_pen.gamma = 1.0;
    let without = assemble_broken(mesh, &zero_pen, 0.0);
    Ok(with.add_scaled(1.0, &without, -1.0))
}

fn split_blocks(mesh: &Mesh, dofs: &DofMap, full: &CsrMatrix) -> OperatorBlocks {
    let lin = dofs.interior_vertices();
    let cst: Vec<usize> = (0..mesh.n_elements()).map(|t| elem_index(mesh, t)).collect();
    let a10 = full.submatrix(lin, &cst);
    OperatorBlocks {
        a11: full.submatrix(lin, lin),
        a01: full.submatrix(&cst, lin),
        a10,
        a00: full.submatrix(&cst, &cst),
    }
}

/// Blocks of the bilinear form on the unknowns.
pub fn assemble_a(mesh: &Mesh, spec: &ProblemSpec, dofs: &DofMap) -> Result<OperatorBlocks> {
    let full = assemble_full(mesh, spec)?;
    Ok(split_blocks(mesh, dofs, &full))
}

/// Diagonal of the nodal stabilizer, `alpha (eps + mu h_i^2)` for d = 2.
pub fn assemble_s(mesh: &Mesh, spec: &ProblemSpec, dofs: &DofMap) -> Vec<f64> {
    dofs.interior_vertices()
        .iter()
        .map(|&v| {
            let h = mesh.h_node(v);
            spec.alpha * (spec.epsilon + spec.mu * h * h)
        })
        .collect()
}

/// `(f, phi)` for every vertex hat and element indicator (broken numbering).
pub fn load_vector(mesh: &Mesh, spec: &ProblemSpec) -> Result<Vec<f64>> {
    let rule: &TriRule = match spec.source_rule {
        SourceRule::Dunavant4 => &DUNAVANT4,
        SourceRule::Centroid => &CENTROID,
    };
    let locals = par::map_range(mesh.n_elements(), |t| {
        let area = mesh.area(t);
        let mut out = [0.0; 4];
        for (l, w) in rule.points.iter().zip(rule.weights) {
            let p = mesh.map_point(t, *l);
            let fv = (spec.f)(p[0], p[1]);
            for k in 0..3 {
                out[k] += w * area * fv * l[k];
            }
            out[3] += w * area * fv;
        }
        out
    });
    let mut load = vec![0.0; mesh.n_vertices() + mesh.n_elements()];
    for (t, out) in locals.into_iter().enumerate() {
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!("non-finite source integral on element {t}")));
        }
        let tri = mesh.triangle(t);
        for k in 0..3 {
            load[tri[k]] += out[k];
        }
        load[elem_index(mesh, t)] += out[3];
    }
    Ok(load)
}

fn rhs_from_full(mesh: &Mesh, spec: &ProblemSpec, dofs: &DofMap, full: &CsrMatrix, lift: &EGFunction) -> Result<(Vec<f64>, Vec<f64>)> {
    if lift.constant.iter().any(|&c| c != 0.0) {
        return Err(Error::invalid("Dirichlet lift must have a zero constant part"));
    }
    let mut x = lift.linear.clone();
    x.extend_from_slice(&lift.constant);
    let action = full.mul_vec(&x);
    let load = load_vector(mesh, spec)?;
    let b: Vec<f64> = load.iter().zip(&action).map(|(l, a)| l - a).collect();
    if let Some(i) = b.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericDomain(format!("non-finite right-hand side entry {i}")));
    }
    let b1 = dofs.interior_vertices().iter().map(|&v| b[v]).collect();
    let b0 = (0..mesh.n_elements()).map(|t| b[elem_index(mesh, t)]).collect();
    Ok((b1, b0))
}

/// `b(v) = (f, v) - a_h(lift, v)` split into linear and constant blocks.
pub fn assemble_rhs(mesh: &Mesh, spec: &ProblemSpec, dofs: &DofMap, lift: &EGFunction) -> Result<(Vec<f64>, Vec<f64>)> {
    let full = assemble_full(mesh, spec)?;
    rhs_from_full(mesh, spec, dofs, &full, lift)
}

/// P1 mass matrix restricted to the interior dofs.
pub fn mass_linear(mesh: &Mesh, dofs: &DofMap) -> CsrMatrix {
    let mut b = TripletBuilder::new(dofs.n_linear(), dofs.n_linear());
    for t in 0..mesh.n_elements() {
        let tri = mesh.triangle(t);
        let area = mesh.area(t);
        for a in 0..3 {
            for c in 0..3 {
                if let (Some(i), Some(j)) = (dofs.dof_of(tri[a]), dofs.dof_of(tri[c])) {
                    b.push(i, j, area / 12.0 * if a == c { 2.0 } else { 1.0 });
                }
            }
        }
    }
    b.build()
}

/// Mass matrix `M0` and unweighted jump matrix `J0` of the element constants.
pub fn assemble_m_j(mesh: &Mesh, _dofs: &DofMap) -> (CsrMatrix, CsrMatrix) {
    let m0 = CsrMatrix::from_diagonal(mesh.areas());
    (m0, jump_matrix(mesh, |_| 1.0))
}

/// `sum_F w(F) <[w0], [v0]>_F` on the element constants.
pub fn jump_matrix(mesh: &Mesh, weight: impl Fn(usize) -> f64) -> CsrMatrix {
    let n = mesh.n_elements();
    let mut b = TripletBuilder::new(n, n);
    for (f, facet) in mesh.facets().iter().enumerate() {
        let w = weight(f) * facet.length;
        let l = facet.left;
        b.push(l, l, w);
        if let Some(r) = facet.right {
            b.push(r, r, w);
            b.push(l, r, -w);
            b.push(r, l, -w);
        }
    }
    b.build()
}

/// Assemble operator blocks, stabilizer, right-hand side (with the Dirichlet
/// lift) and mass matrices.
pub fn assemble_system(mesh: &Mesh, spec: &ProblemSpec, dofs: &DofMap) -> Result<BlockSystem> {
    let full = assemble_full(mesh, spec)?;
    let lift = crate::fespace::dirichlet_lift(mesh, |x, y| (spec.u_d)(x, y))?;
    let (b1, b0) = rhs_from_full(mesh, spec, dofs, &full, &lift)?;
    Ok(BlockSystem {
        ops: split_blocks(mesh, dofs, &full),
        s1: assemble_s(mesh, spec, dofs),
        b1,
        b0,
        m11: mass_linear(mesh, dofs),
        m0: mesh.areas().to_vec(),
        lift,
    })
}
