use std::path::Path;
use std::process::{Command, Output};

fn lossagent(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lossagent"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LOSSAGENT_API_URL")
        .env_remove("LOSSAGENT_API_KEY")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{
  "stages": 4,
  "iterations_per_stage": 20,
  "test_set_size": 3,
  "toy": {"kernel_size": 3, "learning_rate": 0.05, "image_height": 10, "image_width": 10, "pool_size": 3}
}"#;

#[test]
fn run_then_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = lossagent(&["run", "--config", &cfg, "--out", "t.jsonl"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 5);

    let out = lossagent(&["curves", "--in", "t.jsonl", "--out", "c.csv"], dir.path());
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("stage,l1,edge,tv,sharpness"));
    assert_eq!(lines.next().unwrap().split(',').nth(1), Some("1.000000"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"initial_weights": [1.0]}"#);
    let out = lossagent(&["run", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let cfg = write_config(dir.path(), SMALL);
    let out = lossagent(&["compare", "--config", &cfg, "--policies", "fixed,bogus", "--seeds", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn http_backend_without_endpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"stages": 2, "backend": {"kind": "http", "model": "m"}}"#);
    let out = lossagent(&["run", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("LOSSAGENT_API_URL"));
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"stages": 2, "iterations_per_stage": 2000, "policy": "fixed",
            "loss_terms": ["mse"], "initial_weights": [10.0],
            "toy": {"learning_rate": 1000.0, "image_height": 8, "image_width": 8, "pool_size": 2}}"#,
    );
    let out = lossagent(&["run", "--config", &cfg, "--out", "t.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    // the header is flushed even though no stage completed
    let text = std::fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn compare_prints_a_report_for_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = lossagent(
        &[
            "compare", "--config", &cfg, "--policies", "fixed,random,agent", "--seeds", "1,2", "--workers", "2",
            "--out-dir", "runs",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 6);
    assert_eq!(report["summaries"].as_array().unwrap().len(), 3);
    assert_eq!(std::fs::read_dir(dir.path().join("runs")).unwrap().count(), 6);
    assert_eq!(report["summaries"][2]["parse_success_rate"], 1.0);
}

#[test]
fn selftest_passes_and_detects_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let ok = lossagent(&["selftest"], dir.path());
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = lossagent(&["selftest", "--inject-gradient-fault"], dir.path());
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL gradient l1"));
}
