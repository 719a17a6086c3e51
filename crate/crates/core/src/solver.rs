//! Linear SPD solves, the standard enriched Galerkin solve and the nested
//! fixed-point iteration for the bound-preserving scheme.
//!
//! Step 1 (continuous part, constants frozen at `w0`) is solved by a damped
//! Richardson iteration preconditioned with `A11`; Step 2 updates the
//! constants with a single `A00` solve. Both matrices are factored once.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::assembly::{assemble_system, BlockSystem, ProblemSpec};
use crate::error::{Error, Result};
use crate::fespace::{DofMap, EGFunction};
use crate::limiter::Limiter;
use crate::mesh::Mesh;
use crate::par;
use crate::sparse::CsrMatrix;

/// Systems below this size are factored densely.
pub const DIRECT_LIMIT: usize = 3000;
/// Relative residual target of the iterative solver.
pub const PCG_REL_TOL: f64 = 1e-12;

/// A factored (or preconditioned) SPD operator.
pub enum SpdSolver {
    Dense(Cholesky<f64, Dyn>),
    Pcg {
        a: CsrMatrix,
        inv_diag: Vec<f64>,
        rel_tol: f64,
        block: String,
    },
}

impl SpdSolver {
    pub fn new(a: &CsrMatrix, block: &str) -> Result<Self> {
        Self::with_tol(a, block, PCG_REL_TOL)
    }

    pub fn with_tol(a: &CsrMatrix, block: &str, rel_tol: f64) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::invalid(format!("block `{block}` is not square")));
        }
        if a.n_rows() < DIRECT_LIMIT {
            let chol = a
                .to_dense()
                .cholesky()
                .ok_or_else(|| Error::solver(block, "dense Cholesky failed: matrix is not SPD"))?;
            return Ok(SpdSolver::Dense(chol));
        }
        let diag = a.diagonal();
        if let Some(i) = diag.iter().position(|&d| d <= 0.0 || !d.is_finite()) {
            return Err(Error::solver(block, format!("non-positive diagonal entry at row {i}")));
        }
        Ok(SpdSolver::Pcg {
            a: a.clone(),
            inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
            rel_tol,
            block: block.to_string(),
        })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            SpdSolver::Dense(chol) => {
                let x = chol.solve(&DVector::from_column_slice(b));
                Ok(x.as_slice().to_vec())
            }
            SpdSolver::Pcg { a, inv_diag, rel_tol, block } => pcg(a, inv_diag, b, *rel_tol, block),
        }
    }
}

fn pcg(a: &CsrMatrix, inv_diag: &[f64], b: &[f64], rel_tol: f64, block: &str) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = par::norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let target = rel_tol * bnorm;
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = par::dot(&r, &z);
    let max_iter = 10 * n + 100;
    for _ in 0..max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = par::dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::solver(block, format!("non-positive curvature {pap:e} in CG")));
        }
        let alpha = rz / pap;
        par::axpy(alpha, &p, &mut x);
        par::axpy(-alpha, &ap, &mut r);
        if par::norm2(&r) <= target {
            // confirm with the true residual
            let ax = a.mul_vec(&x);
            let true_r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
            if par::norm2(&true_r) <= target {
                return Ok(x);
            }
            r = true_r;
        }
        par::fill_indexed(&mut z, |i, zi| *zi = r[i] * inv_diag[i]);
        let rz_new = par::dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        par::fill_indexed(&mut p, |i, pi| *pi = z[i] + beta * *pi);
    }
    Err(Error::solver(block, format!("CG did not reach relative residual {rel_tol:e} in {max_iter} iterations")))
}

/// Solve `A x = b` for SPD `A`.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
    SpdSolver::with_tol(a, "spd", rel_tol)?.solve(b)
}

/// Switches reproducing the iteration exactly as printed in the source
/// description of the algorithm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveOptions {
    /// Drop the `-a_h(w0, v1)` coupling from the inner residual.
    pub paper_verbatim_inner: bool,
    /// Use the previous, untruncated linear part in the Step-2 right-hand side.
    pub paper_verbatim_outer: bool,
}

/// History of the nested iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    pub outer_iters: usize,
    pub inner_iters: Vec<usize>,
    /// L2 norms of the inner increments, one list per outer iteration.
    pub inner_increments: Vec<Vec<f64>>,
    pub inner_converged: Vec<bool>,
    /// L2 norms of the change of the constant part.
    pub outer_increments: Vec<f64>,
    /// Feasibility of the truncation at each outer iteration.
    pub feasible: Vec<bool>,
    pub feasibility_violations: usize,
    pub converged: bool,
}

impl SolveTrace {
    pub fn total_inner(&self) -> usize {
        self.inner_iters.iter().sum()
    }

    /// One row per inner iteration:
    /// `level,m,n,inner_increment,outer_increment,feasible`.
    pub fn write_csv<W: Write>(&self, level: usize, mut w: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "level,m,n,inner_increment,outer_increment,feasible")?;
        }
        for m in 0..self.outer_iters {
            for (n, inc) in self.inner_increments[m].iter().enumerate() {
                writeln!(
                    w,
                    "{level},{},{},{inc:.16e},{:.16e},{}",
                    m + 1,
                    n + 1,
                    self.outer_increments[m],
                    self.feasible[m]
                )?;
            }
        }
        Ok(())
    }
}

/// Fixed point `u`, its truncation `u_plus` and the iteration history.
#[derive(Debug, Clone)]
pub struct EGSolution {
    pub u: EGFunction,
    pub u_plus: EGFunction,
    pub trace: SolveTrace,
}

/// Result of one inner Richardson loop.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub u1: Vec<f64>,
    pub iters: usize,
    pub increments: Vec<f64>,
    pub converged: bool,
}

/// Assembled system with factored diagonal blocks.
pub struct NestedSolver<'a> {
    pub mesh: &'a Mesh,
    pub dofs: &'a DofMap,
    pub spec: &'a ProblemSpec,
    pub sys: BlockSystem,
    pub opts: SolveOptions,
    a11: SpdSolver,
    a00: SpdSolver,
}

impl<'a> NestedSolver<'a> {
    pub fn new(mesh: &'a Mesh, spec: &'a ProblemSpec, dofs: &'a DofMap, opts: SolveOptions) -> Result<Self> {
        let sys = assemble_system(mesh, spec, dofs)?;
        Self::from_system(mesh, spec, dofs, sys, opts)
    }

    pub fn from_system(mesh: &'a Mesh, spec: &'a ProblemSpec, dofs: &'a DofMap, sys: BlockSystem, opts: SolveOptions) -> Result<Self> {
        spec.validate()?;
        let a11 = SpdSolver::new(&sys.ops.a11, "A11")?;
        let a00 = SpdSolver::new(&sys.ops.a00, "A00")?;
        Ok(NestedSolver { mesh, dofs, spec, sys, opts, a11, a00 })
    }

    pub fn limiter(&self, w0: &[f64]) -> Limiter {
        Limiter::new(self.mesh, self.dofs, w0, self.spec.bounds)
    }

    /// Monolithic solve of the unmodified scheme; returns `(u1, u0)`.
    pub fn standard_eg_dofs(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n1 = self.dofs.n_linear();
        let a = self.sys.ops.monolithic();
        let mut b = self.sys.b1.clone();
        b.extend_from_slice(&self.sys.b0);
        let x = SpdSolver::new(&a, "monolithic")?.solve(&b)?;
        Ok((x[..n1].to_vec(), x[n1..].to_vec()))
    }

    /// Residual of Step 1 at `u1` with constants `w0`.
    pub fn step1_residual(&self, lim: &Limiter, u1: &[f64], w0: &[f64]) -> Vec<f64> {
        let ops = &self.sys.ops;
        let p = lim.p(u1);
        let ap = ops.a11.mul_vec(&p);
        let coupling = if self.opts.paper_verbatim_inner { vec![0.0; u1.len()] } else { ops.a10.mul_vec(w0) };
        par::map_range(u1.len(), |i| {
            let q = u1[i] - p[i];
            self.sys.b1[i] - ap[i] - self.sys.s1[i] * q - coupling[i]
        })
    }

    /// Damped Richardson iteration for Step 1 starting from `u1`.
    pub fn inner_richardson(&self, u1: &[f64], w0: &[f64]) -> Result<InnerOutcome> {
        let lim = self.limiter(w0);
        let mut u = u1.to_vec();
        let mut increments = Vec::new();
        for _ in 0..self.spec.max_inner {
            let r = self.step1_residual(&lim, &u, w0);
            let mut delta = self.a11.solve(&r)?;
            delta.iter_mut().for_each(|d| *d *= self.spec.omega);
            par::axpy(1.0, &delta, &mut u);
            let inc = self.sys.l2_linear(&delta);
            increments.push(inc);
            if inc <= self.spec.tol_inner {
                return Ok(InnerOutcome { u1: u, iters: increments.len(), increments, converged: true });
            }
        }
        Ok(InnerOutcome { u1: u, iters: increments.len(), increments, converged: false })
    }

    /// Step 2: constants from the truncated linear part `w1p`.
    pub fn outer_constant_solve(&self, w1p: &[f64]) -> Result<Vec<f64>> {
        let a01w = self.sys.ops.a01.mul_vec(w1p);
        let rhs: Vec<f64> = self.sys.b0.iter().zip(&a01w).map(|(b, a)| b - a).collect();
        self.a00.solve(&rhs)
    }

    /// Alternate Step 1 and Step 2 from the standard solution.
    pub fn solve(&self) -> Result<EGSolution> {
        let (u1, u0) = self.standard_eg_dofs()?;
        self.solve_from(u1, u0)
    }

    pub fn solve_from(&self, mut u1: Vec<f64>, mut u0: Vec<f64>) -> Result<EGSolution> {
        let mut trace = SolveTrace::default();
        for _ in 0..self.spec.max_outer {
            let lim = self.limiter(&u0);
            let feas = lim.feasibility();
            trace.feasible.push(feas.feasible);
            if !feas.feasible {
                trace.feasibility_violations += 1;
            }
            let inner = self.inner_richardson(&u1, &u0)?;
            let w1 = if self.opts.paper_verbatim_outer { u1.clone() } else { lim.p(&inner.u1) };
            let u0_new = self.outer_constant_solve(&w1)?;
            let diff: Vec<f64> = u0_new.iter().zip(&u0).map(|(a, b)| a - b).collect();
            let inc = self.sys.l2_const(&diff);

            trace.outer_iters += 1;
            trace.inner_iters.push(inner.iters);
            trace.inner_increments.push(inner.increments);
            trace.inner_converged.push(inner.converged);
            trace.outer_increments.push(inc);
            u1 = inner.u1;
            u0 = u0_new;
            if inc <= self.spec.tol_outer {
                trace.converged = true;
                break;
            }
        }
        Ok(self.package(&u1, &u0, trace))
    }

    fn package(&self, u1: &[f64], u0: &[f64], trace: SolveTrace) -> EGSolution {
        let boundary = &self.sys.lift.linear;
        let p = self.limiter(u0).p(u1);
        EGSolution {
            u: EGFunction { linear: self.dofs.scatter_linear(u1, boundary), constant: u0.to_vec() },
            u_plus: EGFunction { linear: self.dofs.scatter_linear(&p, boundary), constant: u0.to_vec() },
            trace,
        }
    }

    /// Residual of `a_h(u+, v) + s_h(u-, v) - b_h(v)` over all basis
    /// functions, linear dofs first.
    pub fn nonlinear_residual(&self, sol: &EGSolution) -> Vec<f64> {
        let ops = &self.sys.ops;
        let u1 = self.dofs.gather_linear(&sol.u);
        let p = self.dofs.gather_linear(&sol.u_plus);
        let u0 = &sol.u_plus.constant;
        let a11p = ops.a11.mul_vec(&p);
        let a10u = ops.a10.mul_vec(u0);
        let mut r: Vec<f64> = (0..p.len())
            .map(|i| a11p[i] + a10u[i] + self.sys.s1[i] * (u1[i] - p[i]) - self.sys.b1[i])
            .collect();
        r.extend(self.conservation_residual(sol).iter().map(|v| -v));
        r
    }

    /// `b_h(1_T) - a_h(u+, 1_T)` per element.
    pub fn conservation_residual(&self, sol: &EGSolution) -> Vec<f64> {
        conservation_residual(&self.sys, self.dofs, &sol.u_plus)
    }
}

/// `b_h(1_T) - a_h(v, 1_T)` per element for a function carrying the lift.
pub fn conservation_residual(sys: &BlockSystem, dofs: &DofMap, v: &EGFunction) -> Vec<f64> {
    let a01 = sys.ops.a01.mul_vec(&dofs.gather_linear(v));
    let a00 = sys.ops.a00.mul_vec(&v.constant);
    (0..sys.b0.len()).map(|t| sys.b0[t] - a01[t] - a00[t]).collect()
}

/// Standard (unlimited) EG solution including the Dirichlet lift.
pub fn solve_standard_eg(mesh: &Mesh, spec: &ProblemSpec, dofs: &DofMap) -> Result<EGFunction> {
    let s = NestedSolver::new(mesh, spec, dofs, SolveOptions::default())?;
    let (u1, u0) = s.standard_eg_dofs()?;
    Ok(EGFunction { linear: dofs.scatter_linear(&u1, &s.sys.lift.linear), constant: u0 })
}

/// Bound-preserving solution with the default iteration.
pub fn solve_bound_preserving(mesh: &Mesh, spec: &ProblemSpec, dofs: &DofMap) -> Result<EGSolution> {
    NestedSolver::new(mesh, spec, dofs, SolveOptions::default())?.solve()
}

/// Dense Cholesky of a nalgebra matrix, exposed for oracles and tests.
pub fn dense_solve(a: &DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    a.clone().cholesky().map(|c| c.solve(&DVector::from_column_slice(b)).as_slice().to_vec())
}
