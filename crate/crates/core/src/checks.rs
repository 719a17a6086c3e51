//! Pass/fail assertions on study reports, shared by `--check` and the
//! acceptance suite.

use std::fmt;

use crate::analysis::{eoc, fitted_rate, LevelRecord};
use crate::study::{Series, StudyReport};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

/// EOC between the two finest levels.
pub fn finest_eoc(series: &Series, get: impl Fn(&LevelRecord) -> f64) -> Option<f64> {
    let r = &series.records;
    (r.len() >= 2).then(|| eoc(get(&r[r.len() - 2]), get(&r[r.len() - 1]))).flatten()
}

fn in_range(v: Option<f64>, lo: f64, hi: f64) -> bool {
    v.is_some_and(|v| v >= lo && v <= hi)
}

fn show(v: Option<f64>) -> String {
    v.map_or("--".into(), |v| format!("{v:.3}"))
}

/// Finest-level L2 and H1 EOCs inside the optimal-rate windows.
pub fn convergence_checks(series: &Series) -> Vec<Check> {
    let l2 = finest_eoc(series, |r| r.err_l2);
    let h1 = finest_eoc(series, |r| r.err_h1);
    vec![
        Check::new("eoc_l2", in_range(l2, 1.9, 2.1), format!("finest EOC(L2) = {} in [1.9, 2.1]", show(l2))),
        Check::new("eoc_h1", in_range(h1, 0.9, 1.1), format!("finest EOC(H1) = {} in [0.9, 1.1]", show(h1))),
    ]
}

pub fn outer_iteration_check(series: &Series, cap: usize) -> Check {
    let worst = series.records.iter().map(|r| r.outer_iters).max().unwrap_or(0);
    let all_conv = series.records.iter().all(|r| r.converged);
    Check::new(
        "outer_iterations",
        worst <= cap && all_conv,
        format!("max outer iterations {worst} <= {cap}, all converged: {all_conv}"),
    )
}

/// `max_T |r_T| <= 1e-8 ||b||` on every level.
pub fn conservation_check(series: &Series) -> Check {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for r in &series.records {
        let ratio = r.max_conservation_residual / r.rhs_norm;
        worst = worst.max(ratio);
        ok &= r.max_conservation_residual <= 1e-8 * r.rhs_norm;
    }
    Check::new(
        format!("conservation[{}]", series.label),
        ok,
        format!("max_T |r_T| / ||b|| = {worst:.3e} <= 1e-8"),
    )
}

/// Nonlinear residual `<= 10 (tol_outer + 1e-12)` on every level.
pub fn residual_check(series: &Series, tol_outer: f64) -> Check {
    let limit = 10.0 * (tol_outer + 1e-12);
    let per_level: Vec<String> = series.records.iter().map(|r| format!("{:.2e}", r.nonlinear_residual)).collect();
    let ok = series.records.iter().all(|r| r.nonlinear_residual <= limit);
    Check::new(
        format!("fixed_point_residual[{}]", series.label),
        ok,
        format!("residuals [{}] <= {limit:.1e}", per_level.join(", ")),
    )
}

pub fn smooth_checks(report: &StudyReport) -> Vec<Check> {
    let Some(s) = report.series.first() else { return vec![Check::new("report", false, "no series")] };
    let mut out = convergence_checks(s);
    out.push(outer_iteration_check(s, 30));
    out.push(conservation_check(s));
    out.push(residual_check(s, report.config.tol_outer));
    out
}

pub fn layer_checks(report: &StudyReport) -> Vec<Check> {
    let mut out = Vec::new();
    let [a, b] = report.config.bounds;
    if let Some(bp) = report.series("bound_preserving") {
        let lo = bp.records.iter().map(|r| r.min_val).fold(f64::INFINITY, f64::min);
        let hi = bp.records.iter().map(|r| r.max_val).fold(f64::NEG_INFINITY, f64::max);
        out.push(Check::new(
            "bounds[bound_preserving]",
            lo >= a - 1e-10 && hi <= b + 1e-10,
            format!("vertex values in [{lo:.3e}, {hi:.6}] within [{a}, {b}] +- 1e-10"),
        ));
        out.push(conservation_check(bp));
        out.push(residual_check(bp, report.config.tol_outer));
    }
    if let Some(std) = report.series("standard") {
        let coarse = std.records.first();
        let min = coarse.map_or(f64::NAN, |r| r.min_val);
        let n = coarse.map_or(0, |r| r.n_elements);
        out.push(Check::new(
            "baseline_violates[standard]",
            min < a,
            format!("standard EG on {n} elements has min {min:.3e} < {a}"),
        ));
        out.push(conservation_check(std));
    }
    out
}

/// Growth rate of a condition number between the two finest levels.
pub fn condition_rate(series: &Series, get: impl Fn(&LevelRecord) -> Option<f64>) -> Option<f64> {
    let h: Vec<f64> = series.records.iter().map(|r| r.h).collect();
    let k: Vec<f64> = series.records.iter().map(|r| get(r).unwrap_or(f64::NAN)).collect();
    fitted_rate(&h, &k).map(|r| -r)
}

pub fn condition_checks(report: &StudyReport) -> Vec<Check> {
    let mut out = Vec::new();
    let betas = &report.config.betas;
    let mut a1_first: Option<Vec<f64>> = None;
    let mut a1_same = true;
    for (series, &beta) in report.series.iter().zip(betas) {
        let r_a1 = condition_rate(series, |r| r.cond_a1);
        let r_a = condition_rate(series, |r| r.cond_a);
        let r_a0 = condition_rate(series, |r| r.cond_a0);
        let b = beta as f64;
        out.push(Check::new(format!("rate_A1[beta={beta}]"), in_range(r_a1, 1.7, 2.1), format!("{} in [1.7, 2.1]", show(r_a1))));
        out.push(Check::new(
            format!("rate_A[beta={beta}]"),
            in_range(r_a, b + 0.5, b + 1.3),
            format!("{} in [{:.1}, {:.1}]", show(r_a), b + 0.5, b + 1.3),
        ));
        out.push(Check::new(format!("rate_A0[beta={beta}]"), r_a0.is_some_and(|r| r <= 2.2), format!("{} <= 2.2", show(r_a0))));
        let k1: Vec<f64> = series.records.iter().map(|r| r.cond_a1.unwrap_or(f64::NAN)).collect();
        match &a1_first {
            None => a1_first = Some(k1),
            Some(first) => {
                a1_same &= first.len() == k1.len() && first.iter().zip(&k1).all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs());
            }
        }
    }
    out.push(Check::new("A1_independent_of_beta", a1_same, "cond(A1) identical across beta to 1e-9 relative"));
    out
}

pub fn checks_for(report: &StudyReport) -> Vec<Check> {
    use crate::study::Experiment::*;
    match report.config.experiment {
        Smooth | Custom => smooth_checks(report),
        Layer => layer_checks(report),
        Condition => condition_checks(report),
    }
}
