use std::fs;
use std::path::Path;
use std::process::Command;

use bpeg::analysis::LevelRecord;
use bpeg::study::{error_csv, parse_error_csv, Experiment, Series, StudyConfig};
use bpeg::Error;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_record(rng: &mut ChaCha8Rng) -> LevelRecord {
    let mut f = || 10f64.powf(rng.gen_range(-14.0..2.0)) * if rng.gen_bool(0.2) { -1.0 } else { 1.0 };
    LevelRecord {
        n_elements: 1 << 7,
        h: f().abs(),
        err_l2: f().abs(),
        err_h1: f().abs(),
        jump_norm: f().abs(),
        const_l2: f().abs(),
        outer_iters: 7,
        min_val: f(),
        max_val: f(),
        max_conservation_residual: f().abs(),
        ..LevelRecord::default()
    }
}

#[test]
fn error_table_round_trips_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let records: Vec<LevelRecord> = (0..4).map(|_| random_record(&mut rng)).collect();
        let series = Series { label: "x".into(), records: records.clone() };
        let back = parse_error_csv(&error_csv(&series)).unwrap();
        assert_eq!(back, records);
    }
}

#[test]
fn error_table_rejects_a_foreign_header() {
    assert!(matches!(parse_error_csv("a,b\n1,2\n"), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn unknown_config_key_is_an_error() {
    let mut cfg = StudyConfig::defaults(Experiment::Smooth);
    let err = cfg.apply_toml("levels = 2\nbetta = 3\n").unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("betta")), "{err}");
}

#[test]
fn ill_typed_config_value_is_an_error() {
    let mut cfg = StudyConfig::defaults(Experiment::Smooth);
    assert!(matches!(cfg.apply_toml("levels = \"many\"\n"), Err(Error::Config(_))));
    assert!(matches!(cfg.apply_toml("omega = 0.0\n").and_then(|_| cfg.validate()), Err(_)));
}

#[test]
fn config_echo_reloads_to_the_same_config() {
    for exp in [Experiment::Smooth, Experiment::Layer, Experiment::Condition, Experiment::Custom] {
        let cfg = StudyConfig::defaults(exp);
        let text = cfg.to_toml();
        let mut back = StudyConfig::defaults(exp);
        back.apply_toml(&text).unwrap();
        assert_eq!(back.to_toml(), text);
    }
}

fn run_cli(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bpeg"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

#[test]
fn cli_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = ["smooth", "--levels", "2", "--omega", "0.4"];
    let ra = run_cli(&args, &a);
    let rb = run_cli(&args, &b);
    assert_eq!(ra.status.code(), Some(0), "{}", String::from_utf8_lossy(&ra.stderr));
    assert_eq!(ra.status.code(), rb.status.code());
    for name in ["smooth_bound_preserving.csv", "smooth_trace.csv"] {
        let x = fs::read(a.join(name)).unwrap();
        let y = fs::read(b.join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs between runs");
    }
}

#[test]
fn cli_check_prints_one_line_per_assertion() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&["layer", "--omega", "0.2", "--check"], dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let checks: Vec<&str> = stdout.lines().filter(|l| l.starts_with("[PASS]") || l.starts_with("[FAIL]")).collect();
    assert!(checks.iter().any(|l| l.starts_with("[PASS] bounds[bound_preserving]")), "{stdout}");
    assert_eq!(out.status.code(), Some(if checks.iter().all(|l| l.starts_with("[PASS]")) { 0 } else { 1 }));
}

#[test]
fn cli_reports_config_errors_with_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = run_cli(&["custom", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}
