use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fairstep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairstep")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(fairstep(&[]).status.code(), Some(1));
    assert_eq!(fairstep(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fairstep(&["datagen", "lunar"]).status.code(), Some(1));
    assert_eq!(fairstep(&["--help"]).status.code(), Some(0));
}

#[test]
fn datagen_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let out = fairstep(&["datagen", "synthetic", "-o", path(&spec)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = fairstep(&["verify", path(&spec)]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["strictly_positive"], true);
    assert_eq!(report["all_accept_dp_violation"], 0.0);
}

#[test]
fn verify_names_the_bad_row() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    assert!(fairstep(&["datagen", "fico", "-o", path(&spec)]).status.success());
    let mut doc: Value = serde_json::from_str(&fs::read_to_string(&spec).unwrap()).unwrap();
    // row 2 is (s = 1, a = 0)
    let row = doc["groups"][1]["kernel"][2].as_array_mut().unwrap();
    row[0] = Value::from(row[0].as_f64().unwrap() + 0.3);
    fs::write(&spec, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = fairstep(&["verify", path(&spec)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("group 1, s 1, a 0"), "{err}");
}

#[test]
fn fico_needs_matching_group_ids() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("scores.json");
    fs::write(
        &data,
        r#"{"groups": [{"id": "gamma", "score_marginal": [0.2, 0.2, 0.2, 0.2, 0.2], "qualify_given_score": [0.1, 0.3, 0.5, 0.7, 0.9]}]}"#,
    )
    .unwrap();
    let out = fairstep(&["datagen", "fico", "--empirical", path(&data), "-o", path(&dir.path().join("s.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));
}

#[test]
fn eval_all_accept_has_no_dp_gap() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    assert!(fairstep(&["datagen", "synthetic", "-o", path(&spec)]).status.success());
    let policy = dir.path().join("policy.json");
    let ones = vec![vec![1.0; 5]; 8];
    fs::write(&policy, serde_json::json!({"groups": {"alpha": ones, "beta": ones}}).to_string()).unwrap();
    let out = fairstep(&["eval", path(&spec), path(&policy), "--comparator", path(&policy)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["dp_violation"], 0.0);
    assert_eq!(v["eqopt_violation"], 0.0);
    assert_eq!(v["regret"], 0.0);
}

#[test]
fn run_then_plot_covers_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{"instance": {"generator": {"kind": "synthetic", "horizon": 3}},
            "methods": [{"kind": "constrained_dp"}, {"kind": "constrained_eqopt"},
                        {"kind": "penalty_dp", "lambdas": [1]}, {"kind": "penalty_eqopt", "lambdas": [1]},
                        {"kind": "unconstrained"}],
            "checkpoints": [8, 16], "seeds": 2, "snapshots": true, "solve_traces": true, "dump_trajectories": true}"#,
    )
    .unwrap();
    let out = fairstep(&["run", path(&config), "--threads", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("out");
    for f in ["metrics.csv", "summary.json", "regret.svg", "pareto_dp.svg", "pareto_eqopt.svg"] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    assert!(run_dir.join("snapshots/policy_unconstrained_0_seed1_k16.json").is_file());
    assert!(run_dir.join("trajectories/penalty_dp_1_seed0.csv").is_file());
    let plots = dir.path().join("plots");
    let out = fairstep(&["plot", path(&run_dir.join("metrics.csv")), "-o", path(&plots)]);
    assert_eq!(out.status.code(), Some(0));
    let svg = fs::read_to_string(plots.join("regret.svg")).unwrap();
    for label in ["constrained_dp", "constrained_eqopt", "penalty_dp (lambda=1)", "penalty_eqopt (lambda=1)", "unconstrained"] {
        assert!(svg.contains(label), "{label} missing from plot");
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(run_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["methods"].as_array().unwrap().len(), 5);
}

#[test]
fn runtime_failures_exit_two() {
    let out = fairstep(&["run", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = fairstep(&["plot", "/nonexistent/metrics.csv"]);
    assert_eq!(out.status.code(), Some(2));
}
