//! End-to-end runs of the `rf-lab` binary and its exit codes.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const IID_LINEAR: &str = r#"
[field]
kind = "iid"
nu = 1
marginal = { type = "normal" }

[observable]
type = "linear"
coeffs = [1.0]

[qmaps]
k = 1

[experiment]
n_grid = [16, 32, 64]
replicas = 5000
seed = 5
"#;

fn rf_lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rf-lab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("rf-lab runs")
}

fn write(dir: &Path, text: &str) {
    std::fs::write(dir.join("rf-lab.toml"), text).unwrap();
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn init_writes_template_and_refuses_overwrite() {
    let dir = TempDir::new().unwrap();
    assert_eq!(rf_lab(dir.path(), &["init"]).status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("rf-lab.toml")).unwrap();
    assert!(text.contains("[field]") && text.contains("tau = 0.9"));
    assert_eq!(rf_lab(dir.path(), &["init"]).status.code(), Some(1));
    assert_eq!(
        rf_lab(dir.path(), &["init", "--force"]).status.code(),
        Some(0)
    );
}

#[test]
fn template_checks_clean() {
    let dir = TempDir::new().unwrap();
    rf_lab(dir.path(), &["init"]);
    let out = rf_lab(dir.path(), &["check"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(!stdout(&out).contains("[FAIL]"));
}

#[test]
fn covariance_writes_json_and_counts() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), IID_LINEAR);
    let out = rf_lab(
        dir.path(),
        &[
            "covariance",
            "--out",
            "o",
            "--diophantine",
            "i=2",
            "j=3",
            "u=0",
            "N=60",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("exact 11 vs predicted 10"));
    let v: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("o/covariance.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(v["D"][0][0].as_f64(), Some(1.0));
    assert_eq!(v["config_hash"].as_str().map(str::len), Some(64));
}

#[test]
fn simulate_passes_and_writes_tables() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), IID_LINEAR);
    let out = rf_lab(dir.path(), &["simulate", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    for f in [
        "report.json",
        "sums.csv",
        "covariance_entries.csv",
        "moment4.csv",
        "slln.csv",
    ] {
        assert!(dir.path().join("o").join(f).exists(), "{f} missing");
    }
    let sums = std::fs::read_to_string(dir.path().join("o/sums.csv")).unwrap();
    assert!(sums.starts_with("# config_hash="));
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), IID_LINEAR);
    rf_lab(
        dir.path(),
        &["simulate", "--out", "a", "--replicas", "120", "--seed", "9"],
    );
    rf_lab(
        dir.path(),
        &["simulate", "--out", "b", "--replicas", "120", "--seed", "9"],
    );
    let a = std::fs::read(dir.path().join("a/report.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/report.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn few_replicas_skip_rather_than_fail() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), IID_LINEAR);
    let out = rf_lab(dir.path(), &["simulate", "--out", "o", "--replicas", "10"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("insufficient-replicas"));
}

#[test]
fn shifted_map_fails_dominance() {
    let dir = TempDir::new().unwrap();
    let text = IID_LINEAR
        .replace("coeffs = [1.0]", "coeffs = [1.0, 1.0]")
        .replace(
            "k = 1",
            "k = 1\nnonlinear = [{ type = \"shift\", offset = [5] }]",
        );
    write(dir.path(), &text);
    let out = rf_lab(dir.path(), &["check"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stdout(&out).contains("[FAIL] q-map dominance"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn config_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        rf_lab(dir.path(), &["check"]).status.code(),
        Some(1),
        "missing file"
    );
    let start = IID_LINEAR.find("[observable]").unwrap();
    write(dir.path(), &IID_LINEAR[start..]);
    assert_eq!(
        rf_lab(dir.path(), &["simulate"]).status.code(),
        Some(1),
        "missing [field]"
    );
    write(
        dir.path(),
        &IID_LINEAR.replace("seed = 5", "seed = 5\ncolour = 1"),
    );
    assert_eq!(
        rf_lab(dir.path(), &["check"]).status.code(),
        Some(1),
        "unknown key"
    );
    write(dir.path(), &IID_LINEAR.replace("[16, 32, 64]", "[32, 16]"));
    assert_eq!(
        rf_lab(dir.path(), &["simulate"]).status.code(),
        Some(1),
        "unsorted grid"
    );
    write(dir.path(), IID_LINEAR);
    assert_eq!(
        rf_lab(dir.path(), &["bogus"]).status.code(),
        Some(1),
        "unknown command"
    );
}

#[test]
fn literal_prefactor_fails_statistically() {
    let dir = TempDir::new().unwrap();
    let text = r#"
[field]
kind = "iid"
nu = 2
marginal = { type = "normal" }

[observable]
type = "product"
comps = [0, 0]

[qmaps]
k = 2

[experiment]
n_grid = [16, 32]
replicas = 1000
checks = ["cov"]

[covariance]
prefactor = "literal"
"#;
    write(dir.path(), text);
    let out = rf_lab(dir.path(), &["simulate", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3), "{}", stdout(&out));
    write(dir.path(), &text.replace("\"literal\"", "\"dimension\""));
    let out = rf_lab(dir.path(), &["simulate", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
}
