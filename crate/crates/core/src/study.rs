//! Experiment harness: configuration, the smooth / layer / condition studies,
//! and CSV and Markdown tables.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::analysis::{self, bound_violation, condition_number, eoc, LevelRecord};
use crate::assembly::{assemble_a, PenaltyWeight, ProblemSpec, SourceRule};
use crate::error::{Error, Result};
use crate::fespace::{DofMap, EGFunction, Field};
use crate::mesh::Mesh;
use crate::par;
use crate::solver::{NestedSolver, SolveOptions, SolveTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Smooth,
    Layer,
    Condition,
    Custom,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Smooth => "smooth",
            Experiment::Layer => "layer",
            Experiment::Condition => "condition",
            Experiment::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(Experiment::Smooth),
            "layer" => Ok(Experiment::Layer),
            "condition" => Ok(Experiment::Condition),
            "custom" => Ok(Experiment::Custom),
            _ => Err(Error::Config(format!("unknown experiment `{s}`"))),
        }
    }
}

/// Named data sets available to the `custom` experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    Smooth,
    Layer,
}

/// Full parameterization of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub experiment: Experiment,
    pub problem: Problem,
    pub levels: usize,
    pub nx: usize,
    pub ny: usize,
    /// `[x0, y0, x1, y1]`
    pub domain: [f64; 4],
    pub epsilon: f64,
    pub mu: f64,
    pub gamma: f64,
    pub beta: u32,
    pub betas: Vec<u32>,
    pub alpha: f64,
    pub omega: f64,
    pub bounds: [f64; 2],
    pub tol_inner: f64,
    pub tol_outer: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub penalty: PenaltyWeight,
    pub source_rule: SourceRule,
    pub baseline_beta: u32,
    pub baseline_alpha: f64,
    pub out: PathBuf,
    pub paper_verbatim_inner: bool,
    pub paper_verbatim_outer: bool,
    pub emit_fields: bool,
    pub parallel_levels: bool,
}

impl StudyConfig {
    /// Defaults of each experiment.
    pub fn defaults(experiment: Experiment) -> Self {
        let base = StudyConfig {
            experiment,
            problem: Problem::Smooth,
            levels: 5,
            nx: 8,
            ny: 4,
            domain: [-1.0, 0.0, 1.0, 1.0],
            epsilon: 1e-5,
            mu: 1.0,
            gamma: 10.0,
            beta: 4,
            betas: vec![1, 2, 4],
            alpha: 1.0,
            omega: 0.5,
            bounds: [0.0, 1.0],
            tol_inner: 1e-9,
            tol_outer: 1e-12,
            max_inner: 1000,
            max_outer: 100,
            penalty: PenaltyWeight::DiffusionReaction,
            source_rule: SourceRule::Dunavant4,
            baseline_beta: 1,
            baseline_alpha: 0.0,
            out: PathBuf::from("results"),
            paper_verbatim_inner: false,
            paper_verbatim_outer: false,
            emit_fields: false,
            parallel_levels: true,
        };
        match experiment {
            Experiment::Smooth | Experiment::Custom => base,
            Experiment::Layer => StudyConfig {
                problem: Problem::Layer,
                levels: 1,
                nx: 12,
                ny: 12,
                domain: [0.0, 0.0, 1.0, 1.0],
                epsilon: 1e-7,
                source_rule: SourceRule::Centroid,
                ..base
            },
            Experiment::Condition => StudyConfig {
                levels: 5,
                nx: 2,
                ny: 2,
                domain: [0.0, 0.0, 1.0, 1.0],
                epsilon: 1.0,
                mu: 1.0,
                gamma: 1.0,
                ..base
            },
        }
    }

    /// Overlay the keys of a flat TOML document.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (key, value) in &table {
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(experiment: Experiment, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::defaults(experiment);
        cfg.apply_toml(&text)?;
        Ok(cfg)
    }

    /// Set one key; unknown keys and ill-typed values are errors.
    pub fn set(&mut self, key: &str, value: &toml::Value) -> Result<()> {
        let bad = || Error::Config(format!("invalid value `{value}` for key `{key}`"));
        let float = || value.as_float().or_else(|| value.as_integer().map(|i| i as f64)).ok_or_else(bad);
        let uint = || value.as_integer().filter(|&i| i >= 0).map(|i| i as usize).ok_or_else(bad);
        let boolean = || value.as_bool().ok_or_else(bad);
        let string = || value.as_str().ok_or_else(bad);
        match key {
            "experiment" => {
                if Experiment::parse(string()?)? != self.experiment {
                    return Err(Error::Config(format!(
                        "config is for experiment `{}` but `{}` was requested",
                        string()?,
                        self.experiment.name()
                    )));
                }
            }
            "problem" => {
                self.problem = match string()? {
                    "smooth" => Problem::Smooth,
                    "layer" => Problem::Layer,
                    _ => return Err(bad()),
                }
            }
            "levels" => self.levels = uint()?,
            "nx" => self.nx = uint()?,
            "ny" => self.ny = uint()?,
            "x0" => self.domain[0] = float()?,
            "y0" => self.domain[1] = float()?,
            "x1" => self.domain[2] = float()?,
            "y1" => self.domain[3] = float()?,
            "epsilon" => self.epsilon = float()?,
            "mu" => self.mu = float()?,
            "gamma" => self.gamma = float()?,
            "beta" => self.beta = uint()? as u32,
            "betas" => {
                let arr = value.as_array().ok_or_else(bad)?;
                self.betas = arr
                    .iter()
                    .map(|v| v.as_integer().filter(|&i| i >= 1).map(|i| i as u32).ok_or_else(bad))
                    .collect::<Result<_>>()?;
            }
            "alpha" => self.alpha = float()?,
            "omega" => self.omega = float()?,
            "a" => self.bounds[0] = float()?,
            "b" => self.bounds[1] = float()?,
            "tol_inner" => self.tol_inner = float()?,
            "tol_outer" => self.tol_outer = float()?,
            "max_inner" => self.max_inner = uint()?,
            "max_outer" => self.max_outer = uint()?,
            "penalty" => {
                self.penalty = match string()? {
                    "diffusion_reaction" => PenaltyWeight::DiffusionReaction,
                    "diffusion_only" => PenaltyWeight::DiffusionOnly,
                    _ => return Err(bad()),
                }
            }
            "source_rule" => {
                self.source_rule = match string()? {
                    "dunavant4" => SourceRule::Dunavant4,
                    "centroid" => SourceRule::Centroid,
                    _ => return Err(bad()),
                }
            }
            "baseline_beta" => self.baseline_beta = uint()? as u32,
            "baseline_alpha" => self.baseline_alpha = float()?,
            "out" => self.out = PathBuf::from(string()?),
            "paper_verbatim_inner" => self.paper_verbatim_inner = boolean()?,
            "paper_verbatim_outer" => self.paper_verbatim_outer = boolean()?,
            "emit_fields" => self.emit_fields = boolean()?,
            "parallel_levels" => self.parallel_levels = boolean()?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::Config("nx and ny must be positive".into()));
        }
        let [x0, y0, x1, y1] = self.domain;
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::Config("domain must have positive extent".into()));
        }
        if self.experiment == Experiment::Condition && self.betas.is_empty() {
            return Err(Error::Config("betas must not be empty".into()));
        }
        if self.problem_kind() == Problem::Layer && (self.nx % 4 != 0 || self.ny % 4 != 0) {
            return Err(Error::Config("layer grids must be divisible by 4".into()));
        }
        self.spec_for(self.beta, self.alpha)?;
        Ok(())
    }

    fn problem_kind(&self) -> Problem {
        match self.experiment {
            Experiment::Smooth | Experiment::Condition => Problem::Smooth,
            Experiment::Layer => Problem::Layer,
            Experiment::Custom => self.problem,
        }
    }

    /// Problem spec with the given penalty exponent and stabilizer weight.
    pub fn spec_for(&self, beta: u32, alpha: f64) -> Result<ProblemSpec> {
        let (f, u_d) = match self.problem_kind() {
            Problem::Smooth => smooth_data(self.epsilon, self.mu),
            Problem::Layer => layer_data(),
        };
        let spec = ProblemSpec {
            epsilon: self.epsilon,
            mu: self.mu,
            gamma: self.gamma,
            beta,
            alpha,
            omega: self.omega,
            bounds: self.bounds,
            f,
            source_rule: self.source_rule,
            u_d,
            tol_inner: self.tol_inner,
            tol_outer: self.tol_outer,
            max_inner: self.max_inner,
            max_outer: self.max_outer,
            penalty: self.penalty,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            paper_verbatim_inner: self.paper_verbatim_inner,
            paper_verbatim_outer: self.paper_verbatim_outer,
        }
    }

    /// Structured mesh of level `l` (grid refined by `2^l`).
    pub fn mesh(&self, level: usize) -> Result<Mesh> {
        Mesh::structured(self.nx << level, self.ny << level, self.domain)
    }

    /// The configuration as a TOML document that reproduces it.
    pub fn to_toml(&self) -> String {
        let mut t = toml::Table::new();
        let mut put = |k: &str, v: toml::Value| {
            t.insert(k.to_string(), v);
        };
        put("experiment", self.experiment.name().into());
        put("problem", match self.problem {
            Problem::Smooth => "smooth",
            Problem::Layer => "layer",
        }
        .into());
        put("levels", (self.levels as i64).into());
        put("nx", (self.nx as i64).into());
        put("ny", (self.ny as i64).into());
        for (k, v) in ["x0", "y0", "x1", "y1"].iter().zip(self.domain) {
            put(k, v.into());
        }
        put("epsilon", self.epsilon.into());
        put("mu", self.mu.into());
        put("gamma", self.gamma.into());
        put("beta", (self.beta as i64).into());
        put("betas", toml::Value::Array(self.betas.iter().map(|&b| (b as i64).into()).collect()));
        put("alpha", self.alpha.into());
        put("omega", self.omega.into());
        put("a", self.bounds[0].into());
        put("b", self.bounds[1].into());
        put("tol_inner", self.tol_inner.into());
        put("tol_outer", self.tol_outer.into());
        put("max_inner", (self.max_inner as i64).into());
        put("max_outer", (self.max_outer as i64).into());
        put("penalty", match self.penalty {
            PenaltyWeight::DiffusionReaction => "diffusion_reaction",
            PenaltyWeight::DiffusionOnly => "diffusion_only",
        }
        .into());
        put("source_rule", match self.source_rule {
            SourceRule::Dunavant4 => "dunavant4",
            SourceRule::Centroid => "centroid",
        }
        .into());
        put("baseline_beta", (self.baseline_beta as i64).into());
        put("baseline_alpha", self.baseline_alpha.into());
        put("out", self.out.display().to_string().into());
        put("paper_verbatim_inner", self.paper_verbatim_inner.into());
        put("paper_verbatim_outer", self.paper_verbatim_outer.into());
        put("emit_fields", self.emit_fields.into());
        put("parallel_levels", self.parallel_levels.into());
        toml::to_string(&t).expect("flat table serializes")
    }
}

/// Exact solution of the smooth test on `(-1, 1) x (0, 1)`.
pub fn smooth_exact(x: f64, y: f64) -> f64 {
    (PI * (x + 1.0) / 2.0).sin() * (PI * y).sin()
}

pub fn smooth_gradient(x: f64, y: f64) -> [f64; 2] {
    let (sx, cx) = (PI * (x + 1.0) / 2.0).sin_cos();
    let (sy, cy) = (PI * y).sin_cos();
    [PI / 2.0 * cx * sy, PI * sx * cy]
}

/// `(f, u_D)` with `f = -eps Lap u + mu u` for the smooth solution.
pub fn smooth_data(epsilon: f64, mu: f64) -> (Field, Field) {
    let lap = PI * PI / 4.0 + PI * PI;
    let f: Field = Arc::new(move |x, y| (epsilon * lap + mu) * smooth_exact(x, y));
    (f, Arc::new(|_, _| 0.0))
}

/// Source vanishing on the centre square `[1/4, 3/4]^2` and equal to one
/// elsewhere, with homogeneous boundary data.
pub fn layer_data() -> (Field, Field) {
    let inside = |s: f64| (0.25..=0.75).contains(&s);
    let f: Field = Arc::new(move |x, y| if inside(x) && inside(y) { 0.0 } else { 1.0 });
    (f, Arc::new(|_, _| 0.0))
}

/// A sequence of level records with a label.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub records: Vec<LevelRecord>,
}

/// Solutions kept for field output.
#[derive(Debug, Clone)]
pub struct LevelFields {
    pub series: String,
    pub level: usize,
    pub mesh: Mesh,
    pub u: EGFunction,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub series: Vec<Series>,
    /// Iteration histories of the bound-preserving runs, by level.
    pub traces: Vec<(usize, SolveTrace)>,
    /// Solution fields, kept only when requested.
    pub fields: Vec<LevelFields>,
}

impl StudyReport {
    pub fn series(&self, label: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.label == label)
    }

    pub fn all_converged(&self) -> bool {
        self.series.iter().all(|s| s.records.iter().all(|r| r.converged))
    }
}

fn map_levels<T: Send>(parallel: bool, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if parallel {
        par::map_range(n, f)
    } else {
        (0..n).map(f).collect()
    }
}

struct Solved {
    record: LevelRecord,
    trace: Option<SolveTrace>,
    fields: LevelFields,
}

fn solve_level(cfg: &StudyConfig, spec: &ProblemSpec, level: usize, label: &str) -> Result<Solved> {
    let start = Instant::now();
    let mesh = cfg.mesh(level)?;
    let dofs = DofMap::new(&mesh);
    let solver = NestedSolver::new(&mesh, spec, &dofs, cfg.options())?;
    let sol = solver.solve()?;
    let residual = par::norm2(&solver.nonlinear_residual(&sol));
    let cons = solver.conservation_residual(&sol);
    let mut record = measure(cfg, spec, &mesh, &sol.u_plus);
    record.outer_iters = sol.trace.outer_iters;
    record.inner_iters = sol.trace.total_inner();
    record.inner_capped = sol.trace.inner_converged.iter().filter(|c| !**c).count();
    record.max_conservation_residual = cons.iter().fold(0.0, |m, r| m.max(r.abs()));
    record.rhs_norm = solver.sys.rhs_norm();
    record.nonlinear_residual = residual;
    record.feasibility_violations = sol.trace.feasibility_violations;
    record.converged = sol.trace.converged;
    record.seconds = start.elapsed().as_secs_f64();
    Ok(Solved {
        record,
        trace: Some(sol.trace),
        fields: LevelFields { series: label.to_string(), level, mesh, u: sol.u_plus },
    })
}

fn measure(cfg: &StudyConfig, spec: &ProblemSpec, mesh: &Mesh, u: &EGFunction) -> LevelRecord {
    let bounds = bound_violation(mesh, u, cfg.bounds, 0.0);
    let (err_l2, err_h1) = match cfg.problem_kind() {
        Problem::Smooth => (
            analysis::error_l2(mesh, smooth_exact, u),
            analysis::error_h1_linear(mesh, smooth_gradient, u),
        ),
        Problem::Layer => (f64::NAN, f64::NAN),
    };
    let const_l2 = u.constant.iter().zip(mesh.areas()).map(|(c, a)| a * c * c).sum::<f64>().sqrt();
    LevelRecord {
        n_elements: mesh.n_elements(),
        h: mesh.h(),
        err_l2,
        err_h1,
        jump_norm: analysis::jump_norm(mesh, spec, &u.constant),
        const_l2,
        min_val: bounds.min_val,
        max_val: bounds.max_val,
        ..LevelRecord::default()
    }
}

#[derive(Default)]
struct Outputs {
    series: Vec<Series>,
    traces: Vec<(usize, SolveTrace)>,
    fields: Vec<LevelFields>,
}

impl Outputs {
    fn push(&mut self, cfg: &StudyConfig, label: &str, solved: Vec<Result<Solved>>) -> Result<()> {
        let mut records = Vec::with_capacity(solved.len());
        for s in solved {
            let s = s?;
            records.push(s.record);
            if let Some(t) = s.trace {
                self.traces.push((s.fields.level, t));
            }
            if cfg.emit_fields {
                self.fields.push(s.fields);
            }
        }
        self.series.push(Series { label: label.to_string(), records });
        Ok(())
    }

    fn report(self, cfg: &StudyConfig) -> StudyReport {
        StudyReport { config: cfg.clone(), series: self.series, traces: self.traces, fields: self.fields }
    }
}

/// Convergence study of the bound-preserving method on the configured data.
pub fn run_smooth(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let spec = cfg.spec_for(cfg.beta, cfg.alpha)?;
    let label = "bound_preserving";
    let solved = map_levels(cfg.parallel_levels, cfg.levels, |l| solve_level(cfg, &spec, l, label));
    let mut out = Outputs::default();
    out.push(cfg, label, solved)?;
    Ok(out.report(cfg))
}

/// The bound-preserving method on arbitrary configured parameters.
pub fn run_custom(cfg: &StudyConfig) -> Result<StudyReport> {
    run_smooth(cfg)
}

/// Interior-layer study: standard EG baseline and the bound-preserving
/// method on each level.
pub fn run_layer(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let base_spec = cfg.spec_for(cfg.baseline_beta, cfg.baseline_alpha)?;
    let spec = cfg.spec_for(cfg.beta, cfg.alpha)?;
    let baseline = map_levels(cfg.parallel_levels, cfg.levels, |l| -> Result<Solved> {
        let start = Instant::now();
        let mesh = cfg.mesh(l)?;
        let dofs = DofMap::new(&mesh);
        let solver = NestedSolver::new(&mesh, &base_spec, &dofs, cfg.options())?;
        let (u1, u0) = solver.standard_eg_dofs()?;
        let u = EGFunction { linear: dofs.scatter_linear(&u1, &solver.sys.lift.linear), constant: u0 };
        let cons = crate::solver::conservation_residual(&solver.sys, &dofs, &u);
        let mut record = measure(cfg, &base_spec, &mesh, &u);
        record.max_conservation_residual = cons.iter().fold(0.0, |m, r| m.max(r.abs()));
        record.rhs_norm = solver.sys.rhs_norm();
        record.converged = true;
        record.seconds = start.elapsed().as_secs_f64();
        Ok(Solved { record, trace: None, fields: LevelFields { series: "standard".into(), level: l, mesh, u } })
    });
    let preserving = map_levels(cfg.parallel_levels, cfg.levels, |l| solve_level(cfg, &spec, l, "bound_preserving"));
    let mut out = Outputs::default();
    out.push(cfg, "standard", baseline)?;
    out.push(cfg, "bound_preserving", preserving)?;
    Ok(out.report(cfg))
}

/// Condition numbers of the monolithic matrix and of its two diagonal
/// blocks, one series per penalty exponent.
pub fn run_condition(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let jobs: Vec<(u32, usize)> = cfg.betas.iter().flat_map(|&b| (0..cfg.levels).map(move |l| (b, l))).collect();
    let results = map_levels(cfg.parallel_levels, jobs.len(), |j| -> Result<LevelRecord> {
        let (beta, level) = jobs[j];
        let start = Instant::now();
        let spec = cfg.spec_for(beta, cfg.alpha)?;
        let mesh = cfg.mesh(level)?;
        let dofs = DofMap::new(&mesh);
        let ops = assemble_a(&mesh, &spec, &dofs)?;
        Ok(LevelRecord {
            n_elements: mesh.n_elements(),
            h: mesh.h(),
            cond_a: Some(condition_number(&ops.monolithic())?),
            cond_a1: Some(condition_number(&ops.a11)?),
            cond_a0: Some(condition_number(&ops.a00)?),
            converged: true,
            seconds: start.elapsed().as_secs_f64(),
            ..LevelRecord::default()
        })
    });
    let mut results = results.into_iter();
    let mut series = Vec::new();
    for &beta in &cfg.betas {
        let records = results.by_ref().take(cfg.levels).collect::<Result<Vec<_>>>()?;
        series.push(Series { label: format!("beta{beta}"), records });
    }
    Ok(StudyReport { config: cfg.clone(), series, traces: Vec::new(), fields: Vec::new() })
}

pub fn run(cfg: &StudyConfig) -> Result<StudyReport> {
    match cfg.experiment {
        Experiment::Smooth => run_smooth(cfg),
        Experiment::Layer => run_layer(cfg),
        Experiment::Condition => run_condition(cfg),
        Experiment::Custom => run_custom(cfg),
    }
}

pub const CSV_HEADER: &str = "elements,h,err_l2,eoc_l2,err_h1,eoc_h1,jump_norm,eoc_jump,const_l2,eoc_const,iters,min_val,max_val,cons_residual";
pub const CONDITION_HEADER: &str = "elements,h,cond_a,cond_a1,cond_a0";

fn full(v: f64) -> String {
    format!("{v:.16e}")
}

fn eoc_cell(records: &[LevelRecord], i: usize, get: impl Fn(&LevelRecord) -> f64, fmt: impl Fn(f64) -> String) -> String {
    if i == 0 {
        return "--".into();
    }
    eoc(get(&records[i - 1]), get(&records[i])).map_or("--".into(), fmt)
}

/// Error table with the fixed header, full precision.
pub fn error_csv(series: &Series) -> String {
    let mut s = String::new();
    writeln!(s, "{CSV_HEADER}").unwrap();
    let r = &series.records;
    for (i, rec) in r.iter().enumerate() {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            rec.n_elements,
            full(rec.h),
            full(rec.err_l2),
            eoc_cell(r, i, |x| x.err_l2, full),
            full(rec.err_h1),
            eoc_cell(r, i, |x| x.err_h1, full),
            full(rec.jump_norm),
            eoc_cell(r, i, |x| x.jump_norm, full),
            full(rec.const_l2),
            eoc_cell(r, i, |x| x.const_l2, full),
            rec.outer_iters,
            full(rec.min_val),
            full(rec.max_val),
            full(rec.max_conservation_residual),
        )
        .unwrap();
    }
    s
}

fn opt_full(v: Option<f64>) -> String {
    v.map_or("--".into(), full)
}

pub fn condition_csv(series: &Series) -> String {
    let mut s = String::new();
    writeln!(s, "{CONDITION_HEADER}").unwrap();
    for rec in &series.records {
        writeln!(s, "{},{},{},{},{}", rec.n_elements, full(rec.h), opt_full(rec.cond_a), opt_full(rec.cond_a1), opt_full(rec.cond_a0)).unwrap();
    }
    s
}

/// Parse an error table back into records (columns not in the table are
/// left at their defaults).
pub fn parse_error_csv(text: &str) -> Result<Vec<LevelRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Parse { line: 1, msg: "unexpected header".into() });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = |msg: &str| Error::Parse { line: i + 2, msg: msg.into() };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 14 {
            return Err(bad("expected 14 columns"));
        }
        let num = |k: usize| cols[k].parse::<f64>().map_err(|_| bad("bad number"));
        out.push(LevelRecord {
            n_elements: cols[0].parse().map_err(|_| bad("bad element count"))?,
            h: num(1)?,
            err_l2: num(2)?,
            err_h1: num(4)?,
            jump_norm: num(6)?,
            const_l2: num(8)?,
            outer_iters: cols[10].parse().map_err(|_| bad("bad iteration count"))?,
            min_val: num(11)?,
            max_val: num(12)?,
            max_conservation_residual: num(13)?,
            ..LevelRecord::default()
        });
    }
    Ok(out)
}

fn sci(v: f64) -> String {
    if v.is_nan() {
        "--".into()
    } else {
        format!("{v:.2e}")
    }
}

fn two(v: f64) -> String {
    format!("{v:.2}")
}

/// Markdown rendering of the whole report, including wall-clock times.
pub fn markdown(report: &StudyReport) -> String {
    let mut s = String::new();
    let cfg = &report.config;
    writeln!(s, "# {} study\n", cfg.experiment.name()).unwrap();
    writeln!(s, "```toml\n{}```\n", cfg.to_toml()).unwrap();
    for series in &report.series {
        writeln!(s, "## {}\n", series.label).unwrap();
        let r = &series.records;
        if cfg.experiment == Experiment::Condition {
            writeln!(s, "| elements | h | cond(A) | rate | cond(A1) | rate | cond(A0) | rate | time [s] |").unwrap();
            writeln!(s, "|---|---|---|---|---|---|---|---|---|").unwrap();
            for (i, rec) in r.iter().enumerate() {
                let rate = |get: fn(&LevelRecord) -> Option<f64>| -> String {
                    if i == 0 {
                        return "--".into();
                    }
                    match (get(&r[i - 1]), get(rec)) {
                        (Some(a), Some(b)) => eoc(b, a).map_or("--".into(), two),
                        _ => "--".into(),
                    }
                };
                writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {:.2} |",
                    rec.n_elements,
                    sci(rec.h),
                    rec.cond_a.map_or("--".into(), sci),
                    rate(|x| x.cond_a),
                    rec.cond_a1.map_or("--".into(), sci),
                    rate(|x| x.cond_a1),
                    rec.cond_a0.map_or("--".into(), sci),
                    rate(|x| x.cond_a0),
                    rec.seconds
                )
                .unwrap();
            }
        } else {
            writeln!(s, "| elements | h | L2 error | eoc | H1 error | eoc | jump | eoc | const L2 | eoc | it | inner | min | max | cons. res. | nonlin. res. | time [s] |").unwrap();
            writeln!(s, "|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|").unwrap();
            for (i, rec) in r.iter().enumerate() {
                writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {:.2} |",
                    rec.n_elements,
                    sci(rec.h),
                    sci(rec.err_l2),
                    eoc_cell(r, i, |x| x.err_l2, two),
                    sci(rec.err_h1),
                    eoc_cell(r, i, |x| x.err_h1, two),
                    sci(rec.jump_norm),
                    eoc_cell(r, i, |x| x.jump_norm, two),
                    sci(rec.const_l2),
                    eoc_cell(r, i, |x| x.const_l2, two),
                    rec.outer_iters,
                    rec.inner_iters,
                    sci(rec.min_val),
                    sci(rec.max_val),
                    sci(rec.max_conservation_residual),
                    sci(rec.nonlinear_residual),
                    rec.seconds
                )
                .unwrap();
            }
        }
        writeln!(s).unwrap();
    }
    s
}

/// Write CSV tables, the Markdown report, the config echo, iteration traces
/// and (optionally) solution fields into `dir`. Returns the files written.
pub fn emit_tables(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = report.config.experiment.name();
    let mut written = Vec::new();
    let mut put = |file: String, body: String| -> Result<()> {
        let path = dir.join(file);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    for series in &report.series {
        let body = if report.config.experiment == Experiment::Condition { condition_csv(series) } else { error_csv(series) };
        put(format!("{name}_{}.csv", series.label), body)?;
    }
    put(format!("{name}.md"), markdown(report))?;
    put(format!("{name}_config.toml"), report.config.to_toml())?;

    let mut traces: Vec<u8> = Vec::new();
    for (i, (level, t)) in report.traces.iter().enumerate() {
        t.write_csv(*level, &mut traces, i == 0).expect("writing to memory");
    }
    if !traces.is_empty() {
        put(format!("{name}_trace.csv"), String::from_utf8(traces).expect("ascii"))?;
    }
    if report.config.emit_fields {
        for f in &report.fields {
            let mut body = String::from("element,vertex,x,y,value\n");
            for t in 0..f.mesh.n_elements() {
                for (k, v) in f.mesh.triangle(t).iter().enumerate() {
                    let p = f.mesh.vertex(*v);
                    writeln!(body, "{t},{v},{},{},{}", full(p[0]), full(p[1]), full(f.u.vertex_value(&f.mesh, t, k))).unwrap();
                }
            }
            put(format!("{name}_{}_level{}_field.csv", f.series, f.level), body)?;
        }
    }
    Ok(written)
}
