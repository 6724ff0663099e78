use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cpt_core::model::{DualHeadModel, ModelConfig};
use serde_json::Value;

const SMALL: &str = r#"
seed = 3
[population]
users = 40
items = 60
stream_length = 4000
eval_items_per_user = 10
oracle_samples = 2000
"#;

fn cpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpt")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn run_ok(args: &[&str]) -> String {
    let out = cpt(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_record(out: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).expect("stderr is one JSON object")
}

fn pipeline(config: &str, dir: &Path) {
    let d = dir.to_str().unwrap();
    run_ok(&["simulate", "--config", config, "--out", d]);
    run_ok(&["train", "--config", config, "--out", d]);
    run_ok(&["eval", "--config", config, "--out", d]);
}

fn report(dir: &Path) -> Vec<Value> {
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    v["rows"].as_array().unwrap().clone()
}

#[test]
fn minimal_simulation_writes_one_line_per_interaction() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[population]\nusers = 2\nitems = 5\nstream_length = 10\neval_items_per_user = 2\noracle_samples = 50\n\
         cohorts = [{ name = \"only\", weight = 1.0, mu = 1.0, sigma = 1.0, activity = 1.0, positive_rate = 0.1, preference = [1.0, 0.0, 0.0] }]\n",
    );
    run_ok(&["simulate", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    let stream = fs::read_to_string(dir.path().join("stream.jsonl")).unwrap();
    assert_eq!(stream.lines().count(), 10);
    let first: Value = serde_json::from_str(stream.lines().next().unwrap()).unwrap();
    for key in ["user_id", "item_id", "ts", "features", "y", "b"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    let meta: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("stream.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let config = write_config(a.path(), SMALL);
    pipeline(&config, a.path());
    pipeline(&config, b.path());
    for f in ["stream.jsonl", "oracle.csv", "checkpoint.bin", "state.bin", "report.csv", "report.json.meta.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    // A different seed changes the data and the recorded hash.
    let c = tempfile::tempdir().unwrap();
    run_ok(&["simulate", "--config", &config, "--seed", "4", "--out", c.path().to_str().unwrap()]);
    assert_ne!(fs::read(a.path().join("stream.jsonl")).unwrap(), fs::read(c.path().join("stream.jsonl")).unwrap());
    assert_ne!(
        fs::read(a.path().join("stream.jsonl.meta.json")).unwrap(),
        fs::read(c.path().join("stream.jsonl.meta.json")).unwrap()
    );
}

#[test]
fn default_cohort_means_follow_configured_order() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[population]\nstream_length = 100000\noracle_samples = 1000\n");
    let summary = run_ok(&["simulate", "--config", &config, "--out", dir.path().to_str().unwrap()]);
    let means: Vec<f64> = ["non_live", "low", "mid", "high"]
        .iter()
        .map(|c| {
            let line = summary.lines().find(|l| l.starts_with(c)).unwrap();
            line.split_whitespace().nth(2).unwrap().parse().unwrap()
        })
        .collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}

#[test]
fn empty_stream_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("empty.jsonl");
    fs::write(&stream, "").unwrap();
    let out = cpt(&["train", "--stream", stream.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_record(&out);
    assert_eq!(err["message"], "empty stream");
    assert_eq!(err["error"], "validation");
}

#[test]
fn zero_lambda_cotraining_matches_regression() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = write_config(d, SMALL);
    run_ok(&["simulate", "--config", &base, "--out", d.to_str().unwrap()]);
    let stream = d.join("stream.jsonl");
    let mut checkpoints = Vec::new();
    for (name, train) in [("co", "variant = \"cotrain\"\nlambda = 0.0"), ("reg", "variant = \"regression\"")] {
        let sub = d.join(name);
        fs::create_dir_all(&sub).unwrap();
        let cfg = write_config(&sub, &format!("baseline = false\n{SMALL}[train]\n{train}\n"));
        run_ok(&["train", "--config", &cfg, "--stream", stream.to_str().unwrap(), "--out", sub.to_str().unwrap()]);
        checkpoints.push(fs::read(sub.join("checkpoint.bin")).unwrap());
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
}

#[test]
fn self_baseline_gives_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let config = write_config(dir.path(), SMALL);
    run_ok(&["simulate", "--config", &config, "--out", d]);
    run_ok(&["train", "--config", &config, "--out", d]);
    let ckpt = dir.path().join("checkpoint.bin");
    let c = ckpt.to_str().unwrap();
    run_ok(&["eval", "--config", &config, "--out", d, "--checkpoint", c, "--baseline", c]);
    let rows = report(dir.path());
    assert!(!rows.is_empty());
    for r in rows.iter().filter(|r| !r["value"].is_null()) {
        assert_eq!(r["delta_vs_baseline"].as_f64(), Some(0.0), "{r}");
    }
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("target,metric,cohort,value,users,skipped,delta_vs_baseline"));
}

#[test]
fn random_weight_checkpoints_sit_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let config = write_config(dir.path(), "[population]\nstream_length = 10\noracle_samples = 10\n");
    run_ok(&["simulate", "--config", &config, "--out", d]);
    let mut values = Vec::new();
    for seed in 0..12 {
        let model = DualHeadModel::new(&ModelConfig { input_dim: 6, hidden: vec![32], seed }).unwrap();
        let ckpt = dir.path().join("random.bin");
        fs::write(&ckpt, model.to_bytes()).unwrap();
        run_ok(&["eval", "--config", &config, "--out", d, "--checkpoint", ckpt.to_str().unwrap()]);
        let rows = report(dir.path());
        let all = rows.iter().find(|r| r["target"] == "magnitude" && r["cohort"] == "all").unwrap();
        values.push(all["value"].as_f64().unwrap());
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    assert!((mean - 0.5).abs() < 0.02, "{values:?}");
}

#[test]
fn feature_dimension_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let config = write_config(dir.path(), SMALL);
    run_ok(&["simulate", "--config", &config, "--out", d]);
    let model = DualHeadModel::new(&ModelConfig { input_dim: 9, hidden: vec![4], seed: 0 }).unwrap();
    let ckpt = dir.path().join("wide.bin");
    fs::write(&ckpt, model.to_bytes()).unwrap();
    let out = cpt(&["eval", "--config", &config, "--out", d, "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_record(&out)["message"].as_str().unwrap().contains("feature dimension mismatch"));
}

#[test]
fn unknown_config_keys_fail_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[train]\nlearning_rat = 0.1\n");
    let out_dir = dir.path().join("out");
    let out = cpt(&["simulate", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_record(&out)["message"].as_str().unwrap().contains("learning_rat"));
    assert!(!out_dir.exists());
}

#[test]
fn missing_input_is_a_runtime_error_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = cpt(&["train", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_record(&out)["message"].as_str().unwrap().contains("stream.jsonl"));
}

#[test]
fn verify_passes_and_detects_tampering() {
    let ok = cpt(&["verify", "--trials-scale", "0.2"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let table = String::from_utf8(ok.stdout).unwrap();
    for suite in ["unbiasedness", "variance_reduction", "linearity", "vwbce_optimum", "reservoir_uniformity", "gradient_check"] {
        assert!(table.lines().any(|l| l.starts_with(suite) && l.contains("PASS")), "{suite}\n{table}");
    }

    let bad = cpt(&["verify", "--suite", "unbiasedness", "--mutate-ties-as-one"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));

    let full = run_ok(&["verify", "--suite", "variance_reduction"]);
    let reduced = run_ok(&["verify", "--suite", "variance_reduction", "--trials-scale", "0.1"]);
    assert!(full.contains("[0.800, 1.200]"));
    assert!(!reduced.contains("[0.800, 1.200]"));
}
