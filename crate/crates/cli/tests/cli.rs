use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_fedhorizon");

fn config_json(separation: f64, rounds: usize, sites: &str) -> String {
    format!(
        r#"{{"config_version": 1, "rounds": {rounds}, "alpha": 0.001,
 "hyper": {{"lr": 0.05, "local_epochs": 1, "batch_size": 16, "seed": 0}},
 "model": {{"hidden_dim": 16, "dropout_rate": 0.2}},
 "nodes": [{{"id": "nih", "manifest": "data/nih.csv"}}, {{"id": "ucl", "manifest": "data/ucl.csv"}}],
 "test_manifest": "data/holdout.csv",
 "network": {{"node_timeout_secs": 20, "join_timeout_secs": 20}},
 "synth": {{"feature_dim": 8, "class_separation": {separation}, "seed": 1, "sites": {sites},
   "holdout": {{"site_id": "holdout", "class_counts": [6, 6, 6, 6], "seed": 1001}}}}}}"#
    )
}

const TWO_SITES: &str = r#"[{"site_id": "nih", "class_counts": [84, 94, 51, 71]}, {"site_id": "ucl", "class_counts": [7, 5, 8, 11]}]"#;

fn fedhorizon(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().expect("spawn fedhorizon")
}

/// A temp dir holding `exp.json` and its synthesized `data/`.
fn experiment(separation: f64, rounds: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.json"), config_json(separation, rounds, TWO_SITES)).unwrap();
    let out = fedhorizon(&["synth", "--config", "exp.json", "--out", "data"], dir.path());
    assert!(out.status.success(), "synth failed: {}", String::from_utf8_lossy(&out.stderr));
    dir
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn data_rows(path: PathBuf) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn synth_writes_each_site_and_is_byte_identical_on_rerun() {
    let dir = experiment(3.0, 2);
    assert_eq!(data_rows(dir.path().join("data/nih.csv")), 300);
    assert_eq!(data_rows(dir.path().join("data/ucl.csv")), 31);
    assert_eq!(data_rows(dir.path().join("data/holdout.csv")), 24);

    let out = fedhorizon(&["synth", "--config", "exp.json", "--out", "again"], dir.path());
    assert!(out.status.success());
    for site in ["nih", "ucl", "holdout"] {
        let a = std::fs::read(dir.path().join(format!("data/{site}.csv"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("again/{site}.csv"))).unwrap();
        assert!(a == b, "{site} manifest differs");
        let mut names: Vec<_> = std::fs::read_dir(dir.path().join(format!("data/{site}_data"))).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for n in names {
            let a = std::fs::read(dir.path().join(format!("data/{site}_data")).join(&n)).unwrap();
            let b = std::fs::read(dir.path().join(format!("again/{site}_data")).join(&n)).unwrap();
            assert!(a == b, "{site}/{n:?} differs");
        }
    }
}

#[test]
fn synth_with_zero_samples_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let sites = r#"[{"site_id": "nih", "class_counts": [0, 0, 0, 0]}]"#;
    std::fs::write(dir.path().join("exp.json"), config_json(3.0, 2, sites)).unwrap();
    let out = fedhorizon(&["synth", "--config", "exp.json", "--out", "data"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("data").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fedhorizon(&["run", "--scenario", "fed"], dir.path()).status.code(), Some(1));
    assert_eq!(fedhorizon(&["synth", "--config", "missing.json", "--out", "x"], dir.path()).status.code(), Some(1));
    assert_eq!(fedhorizon(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn single_run_has_zero_std_and_reruns_are_identical() {
    let dir = experiment(3.0, 3);
    let run = |out: &str| {
        let o = fedhorizon(&["run", "--config", "exp.json", "--scenario", "single,central,fed", "--runs", "1", "--out", out], dir.path());
        assert!(o.status.success(), "run failed: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    let first = run("a");
    run("b");
    let a = std::fs::read(dir.path().join("a/results.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/results.json")).unwrap();
    assert!(a == b, "results.json differs between identical runs");

    let results = read_json(dir.path().join("a/results.json"));
    let ids: Vec<&str> = results.as_array().unwrap().iter().map(|r| r["run_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["single_node:nih", "single_node:ucl", "centralized", "federated"]);
    for r in results.as_array().unwrap() {
        assert_eq!(r["n_runs"], 1);
        assert_eq!(r["seeds"], serde_json::json!([0]));
        assert_eq!(r["macro_f1"]["std"], 0.0);
        assert_eq!(r["accuracy"]["std"], 0.0);
        let m = r["runs"][0]["metrics"]["macro_f1"].as_f64().unwrap();
        assert_eq!(r["macro_f1"]["mean"].as_f64().unwrap(), m);
        assert!(String::from_utf8_lossy(&first.stdout).contains(&format!("{m:.6}(0.000000)")));
    }
    let series = std::fs::read_to_string(dir.path().join("a/series/federated.csv")).unwrap();
    assert_eq!(series.lines().next(), Some("run,round,macro_f1,accuracy,train_loss"));
    assert_eq!(series.lines().count(), 1 + 3);
    assert!(dir.path().join("a/params/single_node-ucl-run0.params").exists());
}

/// Starts `serve` on an ephemeral port and returns it with the bound address.
fn spawn_serve(dir: &Path, extra: &[&str]) -> (Child, String) {
    let mut child = Command::new(BIN)
        .args(["serve", "--config", "exp.json", "--listen", "127.0.0.1:0"])
        .args(extra)
        .current_dir(dir)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line.strip_prefix("listening on ").and_then(|r| r.split(',').next()).unwrap_or_else(|| panic!("unexpected serve banner {line:?}")).to_string();
    std::thread::spawn(move || std::io::copy(&mut stderr, &mut std::io::sink()));
    (child, addr)
}

fn spawn_node(dir: &Path, id: &str, manifest: &str, addr: &str) -> Child {
    Command::new(BIN)
        .args(["node", "--id", id, "--manifest", manifest, "--connect", addr])
        .current_dir(dir)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap()
}

#[test]
fn serve_with_two_node_processes_matches_the_simulator() {
    let dir = experiment(3.0, 4);
    let sim = fedhorizon(&["run", "--config", "exp.json", "--scenario", "fed", "--runs", "1", "--out", "sim"], dir.path());
    assert!(sim.status.success());

    let (serve, addr) = spawn_serve(dir.path(), &["--out", "history.json", "--params", "final.params"]);
    let mut nih = spawn_node(dir.path(), "nih", "data/nih.csv", &addr);
    let mut ucl = spawn_node(dir.path(), "ucl", "data/ucl.csv", &addr);
    let served = serve.wait_with_output().unwrap();
    assert!(served.status.success(), "serve failed: {}", String::from_utf8_lossy(&served.stdout));
    assert!(nih.wait().unwrap().success());
    assert!(ucl.wait().unwrap().success());

    let history = read_json(dir.path().join("history.json"));
    let results = read_json(dir.path().join("sim/results.json"));
    assert_eq!(history["history"]["rounds"].as_array().unwrap().len(), 4);
    assert_eq!(history["history_digest"], results[0]["runs"][0]["history_digest"]);
    assert_eq!(history["params_digest"], results[0]["runs"][0]["params_digest"]);
    let a = std::fs::read(dir.path().join("final.params")).unwrap();
    let b = std::fs::read(dir.path().join("sim/params/federated-run0.params")).unwrap();
    assert!(a == b);
}

#[test]
fn node_gives_up_on_a_dead_endpoint() {
    let dir = experiment(3.0, 1);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let out = fedhorizon(&["node", "--id", "nih", "--manifest", "data/nih.csv", "--connect", &addr, "--attempts", "3", "--backoff-ms", "10"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("3 attempts"));
}

#[test]
fn duplicate_join_aborts_serve() {
    let dir = experiment(3.0, 2);
    let (serve, addr) = spawn_serve(dir.path(), &[]);
    let mut first = spawn_node(dir.path(), "nih", "data/nih.csv", &addr);
    std::thread::sleep(std::time::Duration::from_millis(300));
    let mut second = spawn_node(dir.path(), "nih", "data/nih.csv", &addr);
    let served = serve.wait_with_output().unwrap();
    assert_eq!(served.status.code(), Some(3));
    assert!(!first.wait().unwrap().success());
    assert!(!second.wait().unwrap().success());
}

fn eval_json(dir: &Path, params: &str, manifest: &str) -> Value {
    let out = fedhorizon(&["eval", "--params", params, "--manifest", manifest, "--binary", "--json"], dir);
    assert!(out.status.success(), "eval failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn eval_on_memorized_training_data_is_perfect() {
    let dir = experiment(40.0, 20);
    let out = fedhorizon(&["run", "--config", "exp.json", "--scenario", "single", "--runs", "1", "--out", "res"], dir.path());
    assert!(out.status.success());
    let report = eval_json(dir.path(), "res/params/single_node-nih-run0.params", "data/nih.csv");
    assert_eq!(report["four_class"]["accuracy"], 1.0);
    assert_eq!(report["four_class"]["macro_f1"], 1.0);
    assert_eq!(report["binary"]["accuracy"], 1.0);
    assert_eq!(report["binary"]["macro_f1"], 1.0);
}

#[test]
fn binary_accuracy_is_at_least_four_class_accuracy() {
    let dir = experiment(0.5, 1);
    let out = fedhorizon(&["run", "--config", "exp.json", "--scenario", "single", "--runs", "1", "--out", "res"], dir.path());
    assert!(out.status.success());
    for manifest in ["data/holdout.csv", "data/nih.csv", "data/ucl.csv"] {
        let report = eval_json(dir.path(), "res/params/single_node-ucl-run0.params", manifest);
        let four = report["four_class"]["accuracy"].as_f64().unwrap();
        let two = report["binary"]["accuracy"].as_f64().unwrap();
        assert!(two >= four, "{manifest}: binary {two} < four-class {four}");
    }
}

#[test]
fn eval_rejects_parameters_of_another_shape() {
    let dir = experiment(3.0, 1);
    std::fs::write(dir.path().join("bad.params"), "fedhorizon-params v1 3\n0.0\n0.0\n0.0\n").unwrap();
    let out = fedhorizon(&["eval", "--params", "bad.params", "--manifest", "data/nih.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
