use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use mjp_pgas::diagnostics::StatRow;
use mjp_pgas::io::read_stats_csv;
use serde_json::Value;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mjp-pgas"))
        .args(args)
        .args(["--out-dir", out.to_str().unwrap()])
        .output()
        .unwrap()
}

fn error_of(output: &Output) -> Value {
    let text = String::from_utf8_lossy(&output.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

fn rows(dir: &Path) -> Vec<StatRow> {
    read_stats_csv(std::fs::File::open(dir.join("stats.csv")).unwrap()).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small_lv(dir: &Path) -> Output {
    run(
        &[
            "experiment",
            "lotka-volterra",
            "--horizon",
            "60",
            "--observed-until",
            "30",
            "--observations",
            "5",
            "--iters",
            "6",
            "--burnin",
            "1",
            "--particles",
            "4",
            "--band-points",
            "7",
        ],
        dir,
    )
}

#[test]
fn every_replication_contributes_each_recorded_iteration_once() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["experiment", "toy", "--replications", "3", "--iters", "50", "--burnin", "10", "--thin", "4", "--threads", "2"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(dir.path());
    let keys: BTreeSet<(usize, usize, usize, i64)> = rows.iter().map(|r| (r.replication, r.iteration, r.node, r.state)).collect();
    assert_eq!(keys.len(), rows.len());
    let iterations: BTreeSet<(usize, usize)> = rows.iter().map(|r| (r.replication, r.iteration)).collect();
    // (50 - 10) / 4 recorded sweeps per replication
    assert_eq!(iterations.len(), 3 * 10);
    assert!(iterations.iter().all(|&(_, it)| it >= 10 && (it - 10) % 4 == 0));
    let meta = json(dir.path().join("metadata.json"));
    assert_eq!(meta["replications"].as_array().unwrap().len(), 3);
    for name in ["summary.json", "model.json", "evidence.json", "truth.json", "final_sample.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn experiment_outputs_feed_back_into_infer() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["experiment", "toy", "--replications", "1", "--iters", "20", "--burnin", "2"], dir.path()).status.success());
    let second = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let evidence = dir.path().join("evidence.json");
    let out = run(
        &["infer", "--model", model.to_str().unwrap(), "--evidence", evidence.to_str().unwrap(), "--iters", "20", "--burnin", "2", "--virtual", "uniformization:20"],
        second.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(rows(second.path()).len(), 18 * 2);

    let diag = tempfile::tempdir().unwrap();
    let stats = second.path().join("stats.csv");
    assert!(run(&["diag", "--stats", stats.to_str().unwrap()], diag.path()).status.success());
    let summary = json(diag.path().join("diag.json"));
    assert_eq!(summary["replications"], 1);
}

#[test]
fn simulate_writes_plain_and_augmented_paths() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    std::fs::write(&model, r#"{"kind": "mjp", "t_max": 2.0, "rates": [[0, 1], [3, 0]], "initial": [1, 0]}"#).unwrap();
    assert!(run(&["simulate", "--model", model.to_str().unwrap(), "--seed", "4"], dir.path()).status.success());
    let plain = json(dir.path().join("trajectory.json"));
    assert_eq!(plain["s0"], 0);
    assert_eq!(plain["t_max"], 2.0);

    let aug_dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--model", model.to_str().unwrap(), "--virtual", "homogeneous:5"], aug_dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(aug_dir.path().join("trajectory.json").exists());
}

#[test]
fn forward_filtering_on_an_unbounded_model_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small_lv(dir.path()).status.success());
    assert!(dir.path().join("band.csv").exists());
    let model = dir.path().join("model.json");
    let evidence = dir.path().join("evidence.json");
    let out = run(
        &["infer", "--model", model.to_str().unwrap(), "--evidence", evidence.to_str().unwrap(), "--method", "ffbs", "--iters", "4", "--burnin", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = error_of(&out);
    assert_eq!(err["error"], "unsupported_model");
    assert_eq!(err["exit_code"], 2);
}

#[test]
fn uniformization_on_an_unbounded_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small_lv(dir.path()).status.success());
    let model = dir.path().join("model.json");
    let evidence = dir.path().join("evidence.json");
    let out = run(
        &["infer", "--model", model.to_str().unwrap(), "--evidence", evidence.to_str().unwrap(), "--virtual", "uniformization:50", "--iters", "4", "--burnin", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["experiment", "toy", "--iters", "10", "--burnin", "10"],
        vec!["experiment", "toy", "--particles", "1"],
        vec!["experiment", "toy", "--virtual", "uniformization:5"],
        vec!["simulate", "--model", "/nonexistent/model.json"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let out = run(&args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn evidence_outside_the_horizon_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let evidence = dir.path().join("e.json");
    std::fs::write(&model, r#"{"kind": "mjp", "t_max": 1.0, "rates": [[0, 1], [1, 0]], "initial": [0.5, 0.5]}"#).unwrap();
    std::fs::write(&evidence, r#"[{"kind": "point", "t": 4.0, "loglik": {"rule": "exact", "state": 0}}]"#).unwrap();
    let out = run(&["infer", "--model", model.to_str().unwrap(), "--evidence", evidence.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(error_of(&out)["message"].as_str().is_some());
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
}
