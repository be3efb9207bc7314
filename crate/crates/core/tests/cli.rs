use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn critex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critex")).args(args).env_remove("CRITEX_SEED").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const LAPLACIAN: &str = "N = 3\nR = 1.0\nfamily = \"gilbarg_serrin\"\nsigma = 0.0\n";

#[test]
fn exponent_of_laplacian() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "lap.toml", LAPLACIAN);
    let out = critex(&["exponent", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["format_version"], 1);
    assert_eq!(doc["command"], "exponent");
    let p = doc["sections"]["exponent_bounds"]["p_estimate"].as_f64().unwrap();
    assert!((p - 3.0).abs() < 1e-6, "{p}");
    assert!(doc["input"]["seed"].is_u64());
}

#[test]
fn config_errors_exit_two_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "N = 3\nR = 1.0\nfamily = \"gilbarg_serrin\"\ngama = \"1\"\n");
    let out = critex(&["exponent", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:4:1"), "{err}");

    let out = critex(&["exponent", "--config", &dir.path().join("missing.toml").to_string_lossy()]);
    assert_eq!(out.status.code(), Some(2));

    let out = critex(&["criteria", "--config", &write(dir.path(), "lap.toml", LAPLACIAN)]);
    assert_eq!(out.status.code(), Some(2), "missing --p must be an input error");

    let out = critex(&["reproduce"]);
    assert_eq!(out.status.code(), Some(2));
    let out = critex(&["reproduce", "--scenario", "no_such_scenario"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shoot_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "lap.toml", LAPLACIAN);
    let out = critex(&["shoot", "--config", &cfg, "--p", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["sections"]["shooting"]["outcome"]["kind"], "extends_singular");

    let csv = dir.path().join("traj.csv");
    let out = critex(&["shoot", "--config", &cfg, "--p", "2", "--format", "csv", "--out", &csv.to_string_lossy()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("r,v,dv_dr\n"));
    assert!(text.lines().count() > 100);
}

#[test]
fn criteria_and_seed_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "lap.toml", LAPLACIAN);
    let out = Command::new(env!("CARGO_BIN_EXE_critex"))
        .args(["criteria", "--config", &cfg, "--p", "2"])
        .env("CRITEX_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["input"]["seed"], 42);
    assert_eq!(doc["sections"]["exist"]["verdict"], "converges");
    assert_eq!(doc["sections"]["conflict"], false);

    let bad = Command::new(env!("CARGO_BIN_EXE_critex"))
        .args(["criteria", "--config", &cfg, "--p", "2"])
        .env("CRITEX_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn reproduce_single_scenario() {
    let out = critex(&["reproduce", "--scenario", "claplace4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["sections"]["summary"]["mismatches"], 0);
    assert_eq!(doc["sections"]["scenarios"].as_array().unwrap().len(), 1);
}

#[test]
fn verify_subsolution_below_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "lap.toml", LAPLACIAN);
    let out = critex(&["verify", "--config", &cfg, "--p", "0"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["sections"]["residual"]["pass"], true);
}
