//! Black-box tests of the `hivekit` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hivekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hivekit"))
        .args(args)
        .env_remove("HIVEKIT_CONFIG_DIR")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn check_passes_every_environment() {
    let out = hivekit(&["--json", "check"]);
    let doc = json(&out);
    assert_eq!(doc["n_passed"], doc["n_registered"]);
    assert_eq!(doc["n_registered"], 8);
}

#[test]
fn list_reports_builtin_environments() {
    let doc = json(&hivekit(&["--json", "list"]));
    let ids: Vec<&str> = doc["envs"].as_array().unwrap().iter().map(|e| e["env_id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), 8);
    assert!(ids.contains(&"reach-v0") && ids.contains(&"pendulum_v2d-v0"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(hivekit(&["--bogus"]).status.code(), Some(1));
    assert_eq!(hivekit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hivekit(&["eval", "--env", "nope-v0", "--policy", "random"]).status.code(), Some(1));
    assert_eq!(hivekit(&["--help"]).status.code(), Some(0));
}

#[test]
fn collect_then_replay_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("push.rsl");
    let doc = json(&hivekit(&["--json", "--out", p(&data), "collect", "--env", "push-v0", "--policy", "expert", "--episodes", "5"]));
    assert_eq!(doc["n_trajectories"], 5);
    let rep = json(&hivekit(&["--json", "replay", "--dataset", p(&data)]));
    assert_eq!(rep["n_trajectories"], 5);
    assert_eq!(rep["max_final_state_diff"], 0.0);
    assert!(rep["histogram"].is_array());
}

#[test]
fn step_budget_collection_with_workers_replays() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("reach.rsl");
    let doc = json(&hivekit(&[
        "--json", "--out", p(&data), "collect", "--env", "reach-v0", "--policy", "random", "--steps", "1000", "--workers", "3",
        "--batch", "100",
    ]));
    assert_eq!(doc["details"]["collection"]["steps_delivered"], 1000);
    assert_eq!(hivekit(&["replay", "--dataset", p(&data)]).status.code(), Some(0));
}

#[test]
fn bc_pipeline_reaches_target_success() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("reach.rsl");
    let model = dir.path().join("bc.model");
    json(&hivekit(&["--json", "--out", p(&data), "collect", "--env", "reach-v0", "--policy", "expert", "--episodes", "75"]));
    json(&hivekit(&["--json", "--out", p(&model), "train-bc", "--dataset", p(&data), "--lambda", "1e-3"]));
    let bc = format!("bc:{}", p(&model));
    let doc = json(&hivekit(&["--json", "--seed", "1000", "eval", "--env", "reach-v0", "--policy", &bc, "--episodes", "25"]));
    assert!(doc["success_rate"].as_f64().unwrap() >= 0.8, "{doc}");
    let out = hivekit(&["--seed", "1000", "eval", "--env", "reach-v0", "--policy", "random", "--episodes", "25", "--min-success", "0.5"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn corrupted_dataset_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.rsl");
    json(&hivekit(&["--json", "--out", p(&data), "collect", "--env", "reach-v0", "--policy", "expert", "--episodes", "2"]));
    let mut bytes = std::fs::read(&data).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&data, bytes).unwrap();
    let out = hivekit(&["replay", "--dataset", p(&data)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a RoboSet-lite file"));
}

#[test]
fn replay_against_other_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.rsl");
    json(&hivekit(&["--json", "--out", p(&data), "collect", "--env", "reach-v0", "--policy", "expert", "--episodes", "1"]));
    let cfg = dir.path().join("reach-v0.cfg");
    let text = hivekit::fixtures::get("reach-v0.cfg").unwrap().replace("horizon = 100", "horizon = 101");
    std::fs::write(&cfg, text).unwrap();
    let out = hivekit(&["--config", p(&cfg), "replay", "--dataset", p(&data)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn json_output_is_reproducible_for_a_seed() {
    let run = |seed: &str| {
        let mut doc = json(&hivekit(&["--json", "--seed", seed, "eval", "--env", "push-v0", "--policy", "random", "--episodes", "3"]));
        doc.as_object_mut().unwrap().remove("wall_time_s");
        doc
    };
    assert_eq!(run("4"), run("4"));
    assert_ne!(run("4"), run("5"));
}

#[test]
fn config_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let text = hivekit::fixtures::get("reach-v0.cfg").unwrap().replace("reach-v0", "reach_custom-v0");
    std::fs::write(dir.path().join("reach_custom-v0.cfg"), text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hivekit"))
        .args(["--json", "list"])
        .env("HIVEKIT_CONFIG_DIR", dir.path())
        .output()
        .unwrap();
    let doc = json(&out);
    let envs = doc["envs"].as_array().unwrap();
    assert_eq!(envs.len(), 1);
    assert_eq!(envs[0]["env_id"], "reach_custom-v0");
}

#[test]
fn manifest_summarizes_containers() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.rsl");
    let b = dir.path().join("b.rsl");
    json(&hivekit(&["--json", "--out", p(&a), "collect", "--env", "reach-v0", "--policy", "expert", "--episodes", "2"]));
    json(&hivekit(&["--json", "--out", p(&b), "collect", "--env", "pendulum-v0", "--policy", "random", "--episodes", "1"]));
    let doc = json(&hivekit(&["--json", "manifest", "--inputs", p(&a), p(&b)]));
    assert_eq!(doc["rows"].as_array().map(Vec::len), Some(2), "{doc}");
}
