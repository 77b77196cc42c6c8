use std::path::Path;
use std::process::{Command, Output};

fn tagcourt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagcourt"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let cfg = format!(
        r#"{{
  "paths": {{"work_dir": "{}"}},
  "synthetic": {{"n": 80, "intra_p": 0.25, "inter_p": 0.01}},
  "injection": {{"m": 2, "q": 2, "k": 10}},
  "encoder": {{"type": "hash", "dim": 16}},
  "train": {{"epochs": 3, "batch_size": 32, "hidden_dim": 8, "rounds": 4}}{extra}
}}"#,
        dir.join("work").display()
    );
    let path = dir.join("cfg.json");
    std::fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn print_config_shows_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = tagcourt(&["train", "--config", &cfg, "--print-config"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["train"]["rounds"], 4);
    assert_eq!(v["train"]["gnn_layers"], 2);
    assert_eq!(v["train"]["learning_rate"], 3e-3);
    assert_eq!(v["train"]["neighbor_cap"], 8);
    assert_eq!(v["court"]["n_contextual"], 5);
    assert_eq!(v["train"]["epochs"], 3);
}

#[test]
fn seed_flag_overrides_config() {
    let out = tagcourt(&["eval", "--seed", "17", "--print-config"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 17);
    assert_eq!(v["train"]["rounds"], 256);
    assert_eq!(v["train"]["hidden_dim"], 64);
    assert_eq!(v["court"]["n_structural"], 5);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#", "lr_rate": 1"#);
    let out = tagcourt(&["run-all", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lr_rate"), "{}", stderr(&out));

    let cfg = write_config(dir.path(), r#", "backend": {"type": "oracle", "accuracy": "high"}"#);
    let out = tagcourt(&["court", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/backend"), "{}", stderr(&out));

    let out = tagcourt(&["court", "--config", &write_config(dir.path(), ""), "--backend", "http"]);
    assert_eq!(out.status.code(), Some(2));

    let out = tagcourt(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_without_labels_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = tagcourt(&["eval", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("labels.jsonl"), "{}", stderr(&out));
}

#[test]
fn stages_run_one_by_one_and_court_caches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    for stage in ["gen-synth", "inject", "embed"] {
        let out = tagcourt(&[stage, "--config", &cfg]);
        assert!(out.status.success(), "{stage}: {}", stderr(&out));
    }
    let store = dir.path().join("store");
    let store = store.to_str().unwrap();
    let court = ["court", "--config", &cfg, "--mode", "full_court", "--backend", "oracle", "--parallelism", "3", "--store", store];
    let first = tagcourt(&court);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(!stderr(&first).contains(" 0 backend calls"), "{}", stderr(&first));
    let second = tagcourt(&court);
    assert!(second.status.success());
    assert!(stderr(&second).contains(" 0 backend calls"), "{}", stderr(&second));
    assert!(dir.path().join("store/evidence.jsonl").exists());
    assert!(dir.path().join("store/verdicts.jsonl").exists());
}

#[test]
fn run_all_produces_scores_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = tagcourt(&["run-all", "--config", &cfg, "--seed", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let work = dir.path().join("work");
    let scores = std::fs::read_to_string(work.join("scores.csv")).unwrap();
    assert!(scores.starts_with("node_id,score\n"));
    assert_eq!(scores.lines().count(), 81);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(work.join("metrics.json")).unwrap()).unwrap();
    assert!(m["auc"].as_f64().unwrap() >= 0.0);
    assert_eq!(m["n_pos"].as_u64().unwrap() + m["n_neg"].as_u64().unwrap(), 80);
    assert!(work.join("cost.json").exists());
}
