use std::path::Path;
use std::process::{Command, Output};

fn t6gps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t6gps")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not a JSON error line ({e}): {stderr}"))
}

#[test]
fn terrain_stats_only() {
    let out = t6gps(&["terrain", "--seed", "3", "--stats-only"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 3);
    assert!(v["stats"]["mean_deg"].as_f64().unwrap() > 30.0);
}

#[test]
fn terrain_written_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("terrain.txt");
    let out = t6gps(&["terrain", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(std::fs::metadata(&path).unwrap().len() > 0);
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let out = t6gps(&["evaluate", "--checkpoint", "/nonexistent/policy.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"]["category"], "io");
}

#[test]
fn malformed_checkpoint_is_a_checkpoint_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    std::fs::write(&path, r#"{"format": "something-else", "version": 1}"#).unwrap();
    let out = t6gps(&["evaluate", "--checkpoint", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_line(&out)["error"]["category"], "checkpoint");
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "iterations = 1\nnot_a_key = 2\n").unwrap();
    let out = t6gps(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_line(&out);
    assert_eq!(err["error"]["category"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("not_a_key"));
}

fn write_small_config(path: &Path) {
    let text = "iterations = 1\nsamples = 4\nhorizon = 30\nsub_horizon = 10\neval_episodes = 1\neval_horizon = 20\n";
    std::fs::write(path, text).unwrap();
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    write_small_config(&cfg);
    let run = dir.path().join("run");
    let out = t6gps(&["train", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("iteration   1"));
    for f in ["config.toml", "reports.csv", "policy.json", "iter_001/report.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }

    let eval_dir = dir.path().join("eval");
    let out = t6gps(&[
        "evaluate",
        "--checkpoint",
        run.join("policy.json").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let json_end = stdout.rfind('}').unwrap();
    let stats: serde_json::Value = serde_json::from_str(&stdout[..=json_end]).unwrap();
    assert_eq!(stats["rollouts"], 1);
    assert_eq!(stats["steps"], 20);
    assert!(eval_dir.is_dir());
}
