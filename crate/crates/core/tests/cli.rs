use std::process::{Command, Output};

use gcdlab::experiments::RunReport;
use gcdlab::io::{load_instance, Table};

fn gcdlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcdlab"))
        .args(args)
        .env_remove("GCDLAB_OUT")
        .output()
        .unwrap()
}

fn stdout_report(out: &Output) -> RunReport {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_kind(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn census_small_instance() {
    let out = gcdlab(&["census", "--kind", "gcd", "--k", "2", "--x", "20", "--d", "5", "--delta", "1"]);
    let r = stdout_report(&out);
    let t = r.table("census").unwrap();
    let row = &t.rows[0];
    // A = multiples of 5 in [20, 40]: 5 elements, every pair has gcd >= 5.
    assert_eq!(row[t.column("total").unwrap()], "25");
    assert_eq!(row[t.column("qualifying").unwrap()], "25");
}

#[test]
fn bad_threshold_is_config_error() {
    let out = gcdlab(&["census", "--kind", "gcd", "--k", "2", "--x", "20", "--d", "50", "--delta", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("D <= min"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = gcdlab(&["census", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn cap_exceeded_exit_code() {
    let out = gcdlab(&[
        "census", "--kind", "gcd", "--k", "3", "--x", "2000", "--d", "2", "--delta", "1", "--brute", "--brute-cap", "10",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_kind(&out), "cap_exceeded");
}

#[test]
fn strict_violation_exit_code() {
    let out = gcdlab(&["--strict", "verify", "--kind", "gcd", "--k", "3", "--x", "100", "--d", "10", "--delta", "1"]);
    assert_eq!(out.status.code(), Some(4));
    let lenient = gcdlab(&["verify", "--kind", "gcd", "--k", "3", "--x", "100", "--d", "10", "--delta", "1"]);
    assert!(lenient.status.success());
}

#[test]
fn out_dir_and_saved_instance_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    let out = gcdlab(&[
        "--out",
        dir.path().to_str().unwrap(),
        "census",
        "--kind",
        "lcm",
        "--k",
        "2",
        "--x",
        "50",
        "--l",
        "5000",
        "--delta",
        "1/4",
        "--save-instance",
        inst.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("report.json").exists());
    let csv = std::fs::read_to_string(dir.path().join("census.csv")).unwrap();
    let table = Table::from_csv("census", &csv).unwrap();

    let loaded = load_instance(&inst).unwrap();
    assert_eq!(loaded.sets().len(), 2);
    let again = gcdlab(&["census", "--instance", inst.to_str().unwrap()]);
    let r = stdout_report(&again);
    let t = r.table("census").unwrap();
    let q = table.column("qualifying").unwrap();
    assert_eq!(t.rows[0][q], table.rows[0][q]);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"command": "sieve-sweep", "seed": 3, "trials": 2, "sweep": {"exponents": [6, 7]}}"#,
    )
    .unwrap();
    let a = stdout_report(&gcdlab(&["--config", cfg.to_str().unwrap()]));
    let b = stdout_report(&gcdlab(&["--config", cfg.to_str().unwrap(), "--workers", "3"]));
    assert_eq!(a.determinism_hash, b.determinism_hash);
    let c = stdout_report(&gcdlab(&["--config", cfg.to_str().unwrap(), "--seed", "4"]));
    assert_ne!(a.determinism_hash, c.determinism_hash);
    let wrong = gcdlab(&["--config", cfg.to_str().unwrap(), "census"]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn help_goes_to_stdout() {
    let out = gcdlab(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("sieve-sweep"));
}
