use std::path::Path;
use std::process::{Command, Output};

const BROWNIAN: &str = r#"
format_version = 1

[family]
name = "brownian"

[box]
lower = [-2.0, -2.0]
upper = [2.0, 2.0]
n = 17

[sim]
dt = 0.01
t_end = 0.5
n_paths = 200
master_seed = 1
"#;

fn dsde(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsde"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("out").join(name)).unwrap()).unwrap()
}

#[test]
fn brownian_check_passes_with_unit_m() {
    let t = tempfile::tempdir().unwrap();
    let cfg = config(t.path(), BROWNIAN);
    let out = dsde(t.path(), &["check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(t.path(), "check.json");
    assert_eq!(v["passed"], true);
    assert_eq!(v["command"], "check");
    let s = v.to_string();
    assert!(s.contains("min_m"), "{s}");
}

#[test]
fn config_errors_exit_with_two() {
    let t = tempfile::tempdir().unwrap();
    let cfg = config(t.path(), BROWNIAN);
    // T/dt not an integer
    let out = dsde(t.path(), &["simulate", "--config", &cfg, "--set", "sim.dt=0.3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = dsde(t.path(), &["check", "--config", &cfg, "--set", "family.name=\"nope\""]);
    assert_eq!(out.status.code(), Some(2));
    let bad = config(t.path(), &format!("{BROWNIAN}\nunknown_key = 1\n"));
    let out = dsde(t.path(), &["check", "--config", &bad]);
    assert_eq!(out.status.code(), Some(2));
    let out = dsde(t.path(), &["check"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failing_audit_exits_with_one() {
    let t = tempfile::tempdir().unwrap();
    let cfg = config(t.path(), &BROWNIAN.replace("\"brownian\"", "\"cubic_drift\""));
    let out = dsde(t.path(), &["simulate", "--config", &cfg, "--set", "sim.r_exit=2.0", "--set", "sim.t_end=2.0", "--set", "simulate.max_exit_fraction=0.001", "--set", "sim.dt=0.001"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(t.path(), "simulate.json")["passed"], false);
}

#[test]
fn seed_changes_digest_and_out_does_not() {
    let t = tempfile::tempdir().unwrap();
    let cfg = config(t.path(), BROWNIAN);
    assert_eq!(dsde(t.path(), &["simulate", "--config", &cfg]).status.code(), Some(0));
    let a = json(t.path(), "simulate.json")["config_digest"].clone();
    let u = tempfile::tempdir().unwrap();
    assert_eq!(dsde(u.path(), &["simulate", "--config", &cfg]).status.code(), Some(0));
    assert_eq!(json(u.path(), "simulate.json")["config_digest"], a);
    assert_eq!(dsde(u.path(), &["simulate", "--config", &cfg, "--seed", "2"]).status.code(), Some(0));
    assert_ne!(json(u.path(), "simulate.json")["config_digest"], a);
}

#[test]
fn report_merges_and_rejects_mixed_digests() {
    let t = tempfile::tempdir().unwrap();
    let cfg = config(t.path(), BROWNIAN);
    assert_eq!(dsde(t.path(), &["check", "--config", &cfg]).status.code(), Some(0));
    assert_eq!(dsde(t.path(), &["simulate", "--config", &cfg]).status.code(), Some(0));
    assert_eq!(dsde(t.path(), &["report"]).status.code(), Some(0));
    let merged = json(t.path(), "report.json").to_string();
    assert!(merged.contains("\"check\"") && merged.contains("\"simulate\""));
    assert_eq!(dsde(t.path(), &["check", "--config", &cfg, "--seed", "7"]).status.code(), Some(0));
    assert_eq!(dsde(t.path(), &["report"]).status.code(), Some(1));
}
