use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bpeg::checks::checks_for;
use bpeg::study::{emit_tables, run, Experiment, StudyConfig};

#[derive(Parser)]
#[command(name = "bpeg", version, about = "Bound-preserving enriched Galerkin studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence study with a smooth exact solution.
    Smooth(Flags),
    /// Interior-layer problem: standard EG against the bound-preserving method.
    Layer(Flags),
    /// Condition numbers of the full matrix and its diagonal blocks.
    Condition(Flags),
    /// Bound-preserving solve with parameters taken from the config file.
    Custom(Flags),
}

#[derive(Args)]
struct Flags {
    /// Flat TOML file with study parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate the acceptance assertions; a failure gives a nonzero exit code.
    #[arg(long)]
    check: bool,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    beta: Option<u32>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    tol_inner: Option<f64>,
    #[arg(long)]
    tol_outer: Option<f64>,
    #[arg(long)]
    paper_verbatim_inner: bool,
    #[arg(long)]
    paper_verbatim_outer: bool,
    /// Also write per-vertex solution fields as CSV.
    #[arg(long)]
    emit_fields: bool,
}

fn configure(experiment: Experiment, flags: &Flags) -> bpeg::Result<StudyConfig> {
    let mut cfg = match &flags.config {
        Some(path) => StudyConfig::from_file(experiment, path)?,
        None => StudyConfig::defaults(experiment),
    };
    if let Some(out) = &flags.out {
        cfg.out = out.clone();
    }
    if let Some(v) = flags.levels {
        cfg.levels = v;
    }
    if let Some(v) = flags.beta {
        cfg.beta = v;
        cfg.betas = vec![v];
    }
    if let Some(v) = flags.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = flags.omega {
        cfg.omega = v;
    }
    if let Some(v) = flags.tol_inner {
        cfg.tol_inner = v;
    }
    if let Some(v) = flags.tol_outer {
        cfg.tol_outer = v;
    }
    cfg.paper_verbatim_inner |= flags.paper_verbatim_inner;
    cfg.paper_verbatim_outer |= flags.paper_verbatim_outer;
    cfg.emit_fields |= flags.emit_fields;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(experiment: Experiment, flags: &Flags) -> bpeg::Result<bool> {
    let cfg = configure(experiment, flags)?;
    let report = run(&cfg)?;
    for path in emit_tables(&report, &cfg.out)? {
        println!("wrote {}", path.display());
    }
    let mut ok = report.all_converged();
    if !ok {
        eprintln!("some levels did not converge");
    }
    if flags.check {
        for c in checks_for(&report) {
            println!("{c}");
            ok &= c.passed;
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, flags) = match &cli.command {
        Command::Smooth(f) => (Experiment::Smooth, f),
        Command::Layer(f) => (Experiment::Layer, f),
        Command::Condition(f) => (Experiment::Condition, f),
        Command::Custom(f) => (Experiment::Custom, f),
    };
    match execute(experiment, flags) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
