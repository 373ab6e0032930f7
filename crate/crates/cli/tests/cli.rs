use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use schouten_core::grid::GridField;
use schouten_lab::run::deterministic_part;

fn lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schouten-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn assertion<'a>(s: &'a Value, name: &str) -> &'a Value {
    s["assertions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["name"] == name)
        .unwrap_or_else(|| panic!("no assertion {name}"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn same_seed_gives_identical_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = ["certify", "--suite", "convexity", "--trials", "300", "--seed", "5"];
    assert_eq!(lab(&args, &out).status.code(), Some(0));
    let first = fs::read_to_string(out.join("summary.json")).unwrap();
    let csv = fs::read(out.join("h2_midpoint.csv")).unwrap();
    assert_eq!(lab(&args, &out).status.code(), Some(0));
    let second = fs::read_to_string(out.join("summary.json")).unwrap();
    assert_eq!(deterministic_part(&first).unwrap(), deterministic_part(&second).unwrap());
    assert_eq!(csv, fs::read(out.join("h2_midpoint.csv")).unwrap());

    let other = dir.path().join("other");
    let args = ["certify", "--suite", "convexity", "--trials", "300", "--seed", "6"];
    assert_eq!(lab(&args, &other).status.code(), Some(0));
    assert_ne!(csv, fs::read(other.join("h2_midpoint.csv")).unwrap());
}

#[test]
fn concavity_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = lab(&["certify", "--suite", "concavity", "--trials", "100000", "--seed", "7"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let s = summary(&out);
    assert_eq!(s["passed"], true);
    assert!(s["results"]["log_f2_midpoint"]["worst_defect"].as_f64().unwrap() >= -1e-9);
    assert_eq!(s["results"]["log_f2_midpoint"]["valid_trials"], 100000);
    assert!(s["metadata"]["started_unix"].as_f64().unwrap() > 0.0);
}

#[test]
fn conjecture_suite_reports_without_asserting_sign() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = lab(&["certify", "--suite", "conjecture", "--n", "5", "--k", "3", "--trials", "500"], &out);
    assert_eq!(o.status.code(), Some(0));
    let s = summary(&out);
    let a = assertion(&s, "conjecture_h3_n5_completed");
    assert_eq!(a["passed"], true);
    assert!(out.join("conjecture_h3_n5.csv").exists());
    let lines = fs::read_to_string(out.join("conjecture_h3_n5.csv")).unwrap().lines().count();
    assert_eq!(lines, 501);
}

#[test]
fn homogeneous_solve_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"background": {"mode": "synthetic", "n": 4, "d": 1},
            "problem": {"nt": 64, "nx": 16, "s": 0.5, "boundary": "constant", "value": 0.3}}"#,
    );
    let out = dir.path().join("run");
    let o = lab(&["solve", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let s = summary(&out);
    assert!(assertion(&s, "closed_form")["value"].as_f64().unwrap() <= 1e-10);
    assert_eq!(assertion(&s, "order_relations")["passed"], true);

    let (u, n, l) = GridField::read(&out.join("fields/u.bin")).unwrap();
    assert_eq!((u.nt, u.nx, u.d, n), (64, 16, 1, 4));
    assert!((l - 2.0 * std::f64::consts::PI).abs() < 1e-15);
    let mid = u.at(32, 0);
    assert!((mid - (0.3 - 0.5 / 3.0 * 0.25)).abs() < 1e-10);
    assert!(out.join("fields/u.json").exists());
}

#[test]
fn geodesic_writes_proxies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"problem": {"nt": 16, "nx": 8, "boundary": "sinusoidal", "amplitude": 0.05},
            "solver": {"s_schedule": [1.0, 0.5, 0.25, 0.125]}}"#,
    );
    let out = dir.path().join("run");
    let o = lab(&["geodesic", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let s = summary(&out);
    assert_eq!(assertion(&s, "schedule_completed")["passed"], true);
    assert_eq!(fs::read_to_string(out.join("proxies.csv")).unwrap().lines().count(), 5);
    assert!(out.join("fields/u_03.bin").exists());
}

#[test]
fn report_runs_geometry_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"problem": {"nt": 16, "nx": 8, "boundary": "sinusoidal"}}"#);
    let out = dir.path().join("run");
    let o = lab(&["report", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let s = summary(&out);
    assert!(assertion(&s, "first_variation")["value"].as_f64().unwrap() <= 1e-4);
    assert!(out.join("functional.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");

    // Unparseable config.
    let bad = write_config(dir.path(), "{ not json");
    assert_eq!(lab(&["certify", "--config", bad.to_str().unwrap()], &out).status.code(), Some(2));
    // Unknown suite, and a suite outside its dimension range.
    assert_eq!(lab(&["certify", "--suite", "nonsense"], &out).status.code(), Some(2));
    assert_eq!(lab(&["certify", "--suite", "positivity", "--n", "3", "--trials", "10"], &out).status.code(), Some(2));
    // Unknown command.
    assert_eq!(lab(&["frobnicate"], &out).status.code(), Some(2));

    // Newton budget too small: assertion failure, summary still written.
    let starved = write_config(
        dir.path(),
        r#"{"problem": {"nt": 16, "nx": 8, "boundary": "sinusoidal", "rhs_amplitude": 0.3},
            "solver": {"max_newton": 1, "max_bisections": 0}}"#,
    );
    let o = lab(&["solve", "--config", starved.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1));
    let s = summary(&out);
    assert_eq!(s["passed"], false);
    assert_eq!(assertion(&s, "solver_converged")["passed"], false);

    // Output path occupied by a file.
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(lab(&["identities", "--n", "3", "--trials", "10"], &blocker).status.code(), Some(3));
}
