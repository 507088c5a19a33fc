use std::path::Path;
use std::process::{Command, Output};

fn kcmlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kcmlab"))
        .args(args)
        .current_dir(dir)
        .env_remove("KCMLAB_WORKERS")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn out_of_range_q_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", "{\n  \"q\": 1.5\n}\n");
    let out = kcmlab(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("q must lie in [0,1]") && err.contains("line 2"), "{err}");
}

#[test]
fn malformed_and_unknown_keys_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.json", "{\"q\": 0.5,\n \"speed\": 3}");
    let out = kcmlab(&["gap", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let cfg = write(dir.path(), "b.json", "{\"q\": ");
    assert_eq!(kcmlab(&["gap", "--config", &cfg], dir.path()).status.code(), Some(1));
    assert_eq!(kcmlab(&["nonsense"], dir.path()).status.code(), Some(1));
}

#[test]
fn two_site_hat_gap_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "gap.json", r#"{"graph": {"kind": "segment", "n": 2}, "q": 0.3, "chain": "hat"}"#);
    let out = kcmlab(&["gap", "--config", &cfg], dir.path());
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((report["result"]["gap"].as_f64().unwrap() - 0.3).abs() < 1e-10);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["seed"], 0);
}

#[test]
fn verify_passes_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = kcmlab(&["verify", "--suite", "paths", "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("res/verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn series_csv_and_env_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", r#"{"replicas": 200, "times": [0.5, 1.0], "seed": 4}"#);
    let a = Command::new(env!("CARGO_BIN_EXE_kcmlab"))
        .args(["simulate", "--config", &cfg, "--out", "a"])
        .current_dir(dir.path())
        .env("KCMLAB_WORKERS", "2")
        .status()
        .unwrap();
    assert!(a.success());
    let csv = std::fs::read_to_string(dir.path().join("a/simulate.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config_hash=") && lines[0].ends_with(",seed=4"));
    assert_eq!(lines[1], "time,mean,stderr,replicas");
    assert_eq!(lines.len(), 4);
    let b = kcmlab(&["simulate", "--config", &cfg, "--out", "b", "--workers", "3"], dir.path());
    assert!(b.status.success());
    assert_eq!(csv, std::fs::read_to_string(dir.path().join("b/simulate.csv")).unwrap());
}

#[test]
fn pipeline_and_partition_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.json", r#"{"replicas": 500, "pipeline": {"t": 4}}"#);
    let out = kcmlab(&["pipeline", "--config", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    let cfg = write(dir.path(), "q.json", r#"{"graph": {"kind": "ball", "dim": 2, "radius": 12}, "partition": {"ell": 2}}"#);
    let out = kcmlab(&["partition", "--config", &cfg], dir.path());
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true, "{}", report["result"]["violations"]);
    assert!(report["result"]["blocks"].as_u64().unwrap() >= 4);
}

#[test]
fn box_corners_can_break_block_containment() {
    // no 2-ball fits within distance 2 of a corner, so the corner block reaches past 3ℓ
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "q.json", r#"{"graph": {"kind": "box", "dims": [12, 12]}, "partition": {"ell": 2}}"#);
    let out = kcmlab(&["partition", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], false);
    assert!(report["result"]["violations"][0].as_str().unwrap().contains("3ℓ"));
}
