//! Randomized property suites shared by the `properties` and `acceptance`
//! targets. Every suite runs a fixed number of seeded trials and returns a
//! `Check` summarizing the worst case seen.

#![allow(dead_code)]

use bpeg::analysis::{broken_poincare_constant, interior_jump_norm, poincare_ratio};
use bpeg::assembly::{assemble_a, assemble_full, assemble_s, ProblemSpec};
use bpeg::checks::Check;
use bpeg::fespace::{DofMap, EGFunction};
use bpeg::limiter::{apply_p, feasibility_check, patch_extremes, Limiter};
use bpeg::mesh::Mesh;
use nalgebra::{DMatrix, Matrix3, Vector2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TRIALS: usize = 1000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Structured grid with at most 8x8 cells on a random rectangle, interior
/// vertices jittered by up to a fifth of the cell size.
pub fn random_mesh(rng: &mut ChaCha8Rng) -> Mesh {
    let nx = rng.gen_range(2..=8);
    let ny = rng.gen_range(2..=8);
    let x0 = rng.gen_range(-1.0..1.0);
    let y0 = rng.gen_range(-1.0..1.0);
    let lx = rng.gen_range(0.5..2.0);
    let ly = rng.gen_range(0.5..2.0);
    let base = Mesh::structured(nx, ny, [x0, y0, x0 + lx, y0 + ly]).unwrap();
    let (dx, dy) = (lx / nx as f64, ly / ny as f64);
    let vertices = base
        .vertices()
        .iter()
        .enumerate()
        .map(|(v, p)| {
            if base.is_boundary_vertex(v) {
                *p
            } else {
                [p[0] + 0.2 * dx * rng.gen_range(-1.0..1.0), p[1] + 0.2 * dy * rng.gen_range(-1.0..1.0)]
            }
        })
        .collect();
    Mesh::from_parts(vertices, base.triangles().to_vec()).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn random_bounds(rng: &mut ChaCha8Rng) -> [f64; 2] {
    let a = rng.gen_range(-1.0..1.0);
    [a, a + rng.gen_range(0.1..2.0)]
}

fn random_spec(rng: &mut ChaCha8Rng) -> ProblemSpec {
    let mut spec = ProblemSpec::homogeneous(10f64.powf(rng.gen_range(-6.0..0.0)), rng.gen_range(0.1..2.0)).unwrap();
    spec.gamma = rng.gen_range(1.0..20.0);
    spec.beta = rng.gen_range(1..=4);
    spec.bounds = random_bounds(rng);
    spec
}

/// Identity inside the admissible box, idempotence, node-wise 1-Lipschitz
/// and vertex bounds under feasibility.
pub fn limiter_suite(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut failures = Vec::new();
    for trial in 0..TRIALS {
        let mesh = random_mesh(&mut rng);
        let dofs = DofMap::new(&mesh);
        let bounds = random_bounds(&mut rng);
        let half = 0.5 * (bounds[1] - bounds[0]);
        // ||w0||_inf < (b - a) / 2 guarantees feasibility
        let w0 = random_vec(&mut rng, mesh.n_elements(), 0.99 * half);
        let lim = Limiter::new(&mesh, &dofs, &w0, bounds);
        let ext = patch_extremes(&mesh, &dofs, &w0);
        if !feasibility_check(&ext, bounds).feasible {
            failures.push(format!("trial {trial}: small w0 reported infeasible"));
            continue;
        }

        let inside: Vec<f64> = (0..dofs.n_linear())
            .map(|i| rng.gen_range(bounds[0] - ext.under[i]..=bounds[1] - ext.over[i]))
            .collect();
        if lim.p(&inside) != inside {
            failures.push(format!("trial {trial}: P is not the identity inside the box"));
        }

        let v = random_vec(&mut rng, dofs.n_linear(), 3.0 * (bounds[1] - bounds[0]) + 1.0);
        let r = random_vec(&mut rng, dofs.n_linear(), 3.0 * (bounds[1] - bounds[0]) + 1.0);
        let pv = lim.p(&v);
        let pr = lim.p(&r);
        if lim.p(&pv) != pv {
            failures.push(format!("trial {trial}: P is not idempotent"));
        }
        if (0..v.len()).any(|i| (pv[i] - pr[i]).abs() > (v[i] - r[i]).abs()) {
            failures.push(format!("trial {trial}: P is not 1-Lipschitz"));
        }

        let mut full = EGFunction::zeros(&mesh);
        for (d, &vert) in dofs.interior_vertices().iter().enumerate() {
            full.linear[vert] = v[d];
        }
        let limited = apply_p(&mesh, &dofs, &w0, &full, bounds);
        for t in 0..mesh.n_elements() {
            for k in 0..3 {
                let x = limited.vertex_value(&mesh, t, k);
                let vert = mesh.triangle(t)[k];
                // Dirichlet vertices carry zero data here, which need not lie in [a, b]
                if !mesh.is_boundary_vertex(vert) && (x < bounds[0] - 1e-13 || x > bounds[1] + 1e-13) {
                    failures.push(format!("trial {trial}: vertex value {x} outside {bounds:?}"));
                }
            }
        }
        if failures.len() > 5 {
            break;
        }
    }
    summarize("limiter identity/idempotence/1-Lipschitz/bounds", failures)
}

/// `s_h(Q r - Q v, P r - P v) >= 0` for arbitrary (also infeasible) `w0`.
pub fn stabilizer_sign_suite(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    for trial in 0..TRIALS {
        let mesh = random_mesh(&mut rng);
        let dofs = DofMap::new(&mesh);
        let spec = random_spec(&mut rng);
        let s = assemble_s(&mesh, &spec, &dofs);
        let w0_scale = rng.gen_range(0.01..3.0);
        let w0 = random_vec(&mut rng, mesh.n_elements(), w0_scale);
        let lim = Limiter::new(&mesh, &dofs, &w0, spec.bounds);
        let r = random_vec(&mut rng, dofs.n_linear(), 3.0);
        let v = random_vec(&mut rng, dofs.n_linear(), 3.0);
        let (pr, pv, qr, qv) = (lim.p(&r), lim.p(&v), lim.q(&r), lim.q(&v));
        let mut value = 0.0;
        let mut scale = 0.0;
        for i in 0..s.len() {
            value += s[i] * (qr[i] - qv[i]) * (pr[i] - pv[i]);
            scale += s[i] * (r[i] - v[i]).powi(2);
        }
        let rel = value / scale.max(f64::MIN_POSITIVE);
        worst = worst.min(rel);
        if value < -1e-14 * scale {
            failures.push(format!("trial {trial}: s_h pairing {value:e} at scale {scale:e}"));
        }
    }
    let mut c = summarize("stabilizer sign inequality", failures);
    c.detail = format!("{}; min pairing/scale {worst:.3e}", c.detail);
    c
}

/// `[T1 v - T1 r, v - r] >= 0`, zero only for `v == r`.
pub fn monotonicity_suite(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut failures = Vec::new();
    let mut worst = f64::INFINITY;
    for trial in 0..TRIALS {
        let mesh = random_mesh(&mut rng);
        let dofs = DofMap::new(&mesh);
        let spec = random_spec(&mut rng);
        let a11 = assemble_a(&mesh, &spec, &dofs).unwrap().a11;
        let s = assemble_s(&mesh, &spec, &dofs);
        let w0_scale = rng.gen_range(0.01..3.0);
        let w0 = random_vec(&mut rng, mesh.n_elements(), w0_scale);
        let lim = Limiter::new(&mesh, &dofs, &w0, spec.bounds);
        let r = random_vec(&mut rng, dofs.n_linear(), 3.0);
        let v = if trial % 50 == 0 { r.clone() } else { random_vec(&mut rng, dofs.n_linear(), 3.0) };
        let d: Vec<f64> = v.iter().zip(&r).map(|(a, b)| a - b).collect();
        let (pv, pr, qv, qr) = (lim.p(&v), lim.p(&r), lim.q(&v), lim.q(&r));
        let dp: Vec<f64> = pv.iter().zip(&pr).map(|(a, b)| a - b).collect();
        let ad = a11.mul_vec(&d);
        let mut pairing: f64 = dp.iter().zip(&ad).map(|(a, b)| a * b).sum();
        let mut scale: f64 = d.iter().zip(&ad).map(|(a, b)| a * b).sum();
        for i in 0..s.len() {
            pairing += s[i] * (qv[i] - qr[i]) * d[i];
            scale += s[i] * d[i] * d[i];
        }
        if v == r {
            if pairing != 0.0 {
                failures.push(format!("trial {trial}: pairing {pairing:e} for equal arguments"));
            }
            continue;
        }
        worst = worst.min(pairing / scale);
        if pairing <= 1e-12 * scale {
            failures.push(format!("trial {trial}: pairing {pairing:e} at scale {scale:e}"));
        }
    }
    let mut c = summarize("strong monotonicity of the step-1 operator", failures);
    c.detail = format!("{}; min pairing/scale {worst:.3e}", c.detail);
    c
}

/// Continuous functions (any nodal values, one global constant) have no
/// interior jumps; a non-constant enrichment does.
pub fn jump_suite(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mesh = random_mesh(&mut rng);
        let linear = random_vec(&mut rng, mesh.n_vertices(), 5.0);
        let c = rng.gen_range(-5.0..5.0);
        let cont = EGFunction::new(&mesh, linear.clone(), vec![c; mesh.n_elements()]).unwrap();
        let j = interior_jump_norm(&mesh, &cont);
        let scale = linear.iter().fold(c.abs(), |m, v| m.max(v.abs()));
        worst = worst.max(j / scale);
        if j > 1e-13 * scale {
            failures.push(format!("trial {trial}: continuous function has jump norm {j:e}"));
        }
        let mut broken = cont.clone();
        broken.constant[rng.gen_range(0..mesh.n_elements())] += 1.0;
        if interior_jump_norm(&mesh, &broken) <= 0.0 {
            failures.push(format!("trial {trial}: perturbed constant has no jump"));
        }
    }
    let mut c = summarize("jump norm of continuous functions", failures);
    c.detail = format!("{}; max jump/scale {worst:.3e}", c.detail);
    c
}

/// The measured broken-Poincare constant does not grow by more than 10%
/// under uniform refinement, and bounds random samples.
pub fn poincare_suite(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut failures = Vec::new();
    let mut worst_growth: f64 = 0.0;
    for trial in 0..TRIALS {
        let coarse = {
            let n = rng.gen_range(1..=2);
            let x0 = rng.gen_range(-1.0..1.0);
            let y0 = rng.gen_range(-1.0..1.0);
            Mesh::structured(n, n, [x0, y0, x0 + rng.gen_range(0.5..2.0), y0 + rng.gen_range(0.5..2.0)]).unwrap()
        };
        let mut meshes = vec![coarse];
        while meshes.last().unwrap().n_elements() * 4 <= 2 * 8 * 8 {
            let next = meshes.last().unwrap().refine_uniform().unwrap();
            meshes.push(next);
        }
        let consts: Vec<f64> = meshes.iter().map(|m| broken_poincare_constant(m).unwrap()).collect();
        for w in consts.windows(2) {
            worst_growth = worst_growth.max(w[1] / w[0]);
            if w[1] > 1.1 * w[0] {
                failures.push(format!("trial {trial}: constant grew {:.4} -> {:.4}", w[0], w[1]));
            }
        }
        for (m, c) in meshes.iter().zip(&consts) {
            let v0 = random_vec(&mut rng, m.n_elements(), 1.0);
            let ratio = poincare_ratio(m, &v0);
            if ratio > c * (1.0 + 1e-10) {
                failures.push(format!("trial {trial}: sample ratio {ratio} exceeds constant {c}"));
            }
        }
    }
    let mut c = summarize("broken Poincare constant under refinement", failures);
    c.detail = format!("{}; max growth factor {worst_growth:.4}", c.detail);
    c
}

/// Dense reference for the bilinear form on the broken basis (vertex hats,
/// then element indicators), built from first principles with nalgebra.
pub fn dense_oracle(vertices: &[[f64; 2]], tris: &[[usize; 3]], spec: &ProblemSpec) -> DMatrix<f64> {
    let nv = vertices.len();
    let n = nv + tris.len();
    // per element: affine coefficients (c0 + c1 x + c2 y) of each barycentric
    let coeffs: Vec<Matrix3<f64>> = tris
        .iter()
        .map(|t| {
            let m = Matrix3::from_fn(|r, c| if c == 0 { 1.0 } else { vertices[t[r]][c - 1] });
            m.try_inverse().unwrap()
        })
        .collect();
    let value = |b: usize, t: usize, p: [f64; 2]| -> f64 {
        if b >= nv {
            return if b - nv == t { 1.0 } else { 0.0 };
        }
        match tris[t].iter().position(|&v| v == b) {
            Some(k) => coeffs[t][(0, k)] + coeffs[t][(1, k)] * p[0] + coeffs[t][(2, k)] * p[1],
            None => 0.0,
        }
    };
    let grad = |b: usize, t: usize| -> Vector2<f64> {
        if b >= nv {
            return Vector2::zeros();
        }
        match tris[t].iter().position(|&v| v == b) {
            Some(k) => Vector2::new(coeffs[t][(1, k)], coeffs[t][(2, k)]),
            None => Vector2::zeros(),
        }
    };

    let mut a = DMatrix::zeros(n, n);
    // volume terms: collapsed 6x6 Gauss-Legendre rule on each triangle
    let (gx, gw) = gauss_legendre(6);
    for (t, tri) in tris.iter().enumerate() {
        let [p0, p1, p2] = tri.map(|v| Vector2::new(vertices[v][0], vertices[v][1]));
        let jac = ((p1 - p0).perp(&(p2 - p0))).abs();
        for (i, &xi) in gx.iter().enumerate() {
            for (j, &eta) in gx.iter().enumerate() {
                let (s, r) = (xi, eta * (1.0 - xi));
                let w = gw[i] * gw[j] * (1.0 - xi) * jac;
                let p = p0 + (p1 - p0) * s + (p2 - p0) * r;
                for b1 in 0..n {
                    for b2 in 0..n {
                        a[(b1, b2)] += w
                            * (spec.epsilon * grad(b1, t).dot(&grad(b2, t))
                                + spec.mu * value(b1, t, [p.x, p.y]) * value(b2, t, [p.x, p.y]));
                    }
                }
            }
        }
    }

    // facets: every edge, with its adjacent elements
    let mut edges: Vec<([usize; 2], Vec<usize>)> = Vec::new();
    for (t, tri) in tris.iter().enumerate() {
        for k in 0..3 {
            let mut e = [tri[k], tri[(k + 1) % 3]];
            e.sort();
            match edges.iter_mut().find(|(f, _)| *f == e) {
                Some((_, adj)) => adj.push(t),
                None => edges.push((e, vec![t])),
            }
        }
    }
    let (ex, ew) = gauss_legendre(4);
    for (e, adj) in &edges {
        let pa = Vector2::new(vertices[e[0]][0], vertices[e[0]][1]);
        let pb = Vector2::new(vertices[e[1]][0], vertices[e[1]][1]);
        let len = (pb - pa).norm();
        let sigma = spec.gamma * (spec.epsilon + spec.mu * len * len) / len.powi(spec.beta as i32);
        // outward normal of each adjacent element, oriented away from its centroid
        let normals: Vec<Vector2<f64>> = adj
            .iter()
            .map(|&t| {
                let c = tris[t].iter().fold(Vector2::zeros(), |s, &v| s + Vector2::new(vertices[v][0], vertices[v][1])) / 3.0;
                let tan = (pb - pa) / len;
                let nrm = Vector2::new(tan.y, -tan.x);
                if nrm.dot(&(pa - c)) > 0.0 {
                    nrm
                } else {
                    -nrm
                }
            })
            .collect();
        let weight_avg = 1.0 / adj.len() as f64;
        for (q, &s) in ex.iter().enumerate() {
            let w = ew[q] * len;
            let p = pa + (pb - pa) * s;
            // jump vector and average gradient of each basis function
            let jump = |b: usize| -> Vector2<f64> {
                adj.iter().zip(&normals).fold(Vector2::zeros(), |acc, (&t, nrm)| acc + nrm * value(b, t, [p.x, p.y]))
            };
            let avg = |b: usize| -> Vector2<f64> {
                adj.iter().fold(Vector2::zeros(), |acc, &t| acc + grad(b, t)) * weight_avg
            };
            for b1 in 0..n {
                for b2 in 0..n {
                    let (j1, j2) = (jump(b1), jump(b2));
                    a[(b1, b2)] += w
                        * (-spec.epsilon * avg(b2).dot(&j1) - spec.epsilon * avg(b1).dot(&j2) + sigma * j1.dot(&j2));
                }
            }
        }
    }
    a
}

/// Nodes and weights of the Gauss-Legendre rule on [0, 1] (Golub-Welsch).
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let jm = DMatrix::from_fn(m, m, |i, j| {
        if i + 1 == j || j + 1 == i {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = jm.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (0.5 * (eig.eigenvalues[i] + 1.0), eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Assembled operator against the dense oracle on a two-triangle mesh, for a
/// sweep of random coefficients and vertex positions.
pub fn oracle_suite(seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut jitter = |p: [f64; 2]| [p[0] + rng.gen_range(-0.2..0.2), p[1] + rng.gen_range(-0.2..0.2)];
        let vertices = vec![jitter([0.0, 0.0]), jitter([1.0, 0.0]), jitter([1.0, 1.0]), jitter([0.0, 1.0])];
        let tris = vec![[0, 1, 2], [0, 2, 3]];
        let spec = random_spec(&mut rng);
        let mesh = Mesh::from_parts(vertices.clone(), tris.clone()).unwrap();
        let oracle = dense_oracle(&vertices, mesh.triangles(), &spec);
        let assembled = assemble_full(&mesh, &spec).unwrap().to_dense();
        let scale = oracle.amax();
        for r in 0..oracle.nrows() {
            for c in 0..oracle.ncols() {
                let diff = (assembled[(r, c)] - oracle[(r, c)]).abs() / scale;
                worst = worst.max(diff);
                if diff > 1e-12 {
                    failures.push(format!("trial {trial}: entry ({r},{c}) {} vs {}", assembled[(r, c)], oracle[(r, c)]));
                }
            }
        }
        if failures.len() > 5 {
            break;
        }
    }
    let mut c = summarize("assembly against dense quadrature oracle", failures);
    c.detail = format!("{}; max entry error / max entry {worst:.3e}", c.detail);
    c
}

/// Every property suite with fixed seeds.
pub fn all_suites() -> Vec<Check> {
    vec![
        limiter_suite(11),
        stabilizer_sign_suite(12),
        monotonicity_suite(13),
        jump_suite(14),
        poincare_suite(15),
        oracle_suite(16),
    ]
}

fn summarize(name: &str, failures: Vec<String>) -> Check {
    if failures.is_empty() {
        Check::new(name, true, format!("{TRIALS} trials"))
    } else {
        Check::new(name, false, format!("{} failure(s), first: {}", failures.len(), failures[0]))
    }
}
