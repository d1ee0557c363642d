use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sedcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sedcap")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = sedcap(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    o
}

fn core_data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name).to_string_lossy().into_owned()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn synth(dir: &Path) {
    ok(&["synth", "--out", &p(dir, "data"), "--frames", "6", "--dim", "8"]);
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("cfg.json");
    std::fs::write(
        &path,
        r#"{"architecture": {"bigru1_cells": 8, "bigru2_cells": 8, "caption_gru_cells": 16,
            "decoder_gru_cells": 16, "embed_dim": 16, "leaky_dense_units": 16},
            "training": {"epochs": 2, "batch_size": 4}, "skipgram": {"dim": 16, "epochs": 2}}"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn listing(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn prep_events_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let labels = p(dir.path(), "data/labels.txt");
    ok(&["prep-events", "--labels", &labels, "--out", &p(dir.path(), "a.txt")]);
    ok(&["prep-events", "--labels", &labels, "--out", &p(dir.path(), "b.txt")]);
    let a = std::fs::read(dir.path().join("a.txt")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(dir.path().join("b.txt")).unwrap());
}

#[test]
fn prep_events_rejects_short_label_table() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let text = std::fs::read_to_string(dir.path().join("data/labels.txt")).unwrap();
    assert_eq!(text.lines().count(), 527);
    let short: Vec<&str> = text.lines().take(526).collect();
    std::fs::write(dir.path().join("short.txt"), short.join("\n") + "\n").unwrap();
    let o = sedcap(&["prep-events", "--labels", &p(dir.path(), "short.txt"), "--out", &p(dir.path(), "c.txt")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("526"), "{}", stderr(&o));
    assert!(!dir.path().join("c.txt").exists());
}

#[test]
fn embeddings_cover_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = small_config(dir.path());
    ok(&[
        "train-embeddings", "--manifest", &p(dir.path(), "data/train.jsonl"), "--out", &p(dir.path(), "e.emb"),
        "--config", &cfg,
    ]);
    let emb = sedcap::embeddings::load_embeddings(&dir.path().join("e.emb")).unwrap();
    let vocab = std::fs::read_to_string(dir.path().join("e.vocab")).unwrap();
    assert_eq!(emb.vocab_size(), vocab.lines().count());
    assert_eq!(emb.dim(), 16);
}

#[test]
fn corrupt_manifest_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.jsonl"), "{\"clip_id\": \"a\", \"feat\n").unwrap();
    let o = sedcap(&["train-embeddings", "--manifest", &p(dir.path(), "m.jsonl"), "--out", &p(dir.path(), "e.emb")]);
    assert!(!o.status.success());
    assert!(!dir.path().join("e.emb").exists());
}

#[test]
fn train_missing_corpus_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = sedcap(&[
        "train", "--train", &p(dir.path(), "data/train.jsonl"), "--val", &p(dir.path(), "data/val.jsonl"),
        "--labels", &p(dir.path(), "data/labels.txt"), "--corpus", &p(dir.path(), "nope.txt"), "--out",
        &p(dir.path(), "m.acm"),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn train_caption_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let cfg = small_config(d);
    ok(&["prep-events", "--labels", &p(d, "data/labels.txt"), "--out", &p(d, "corpus.txt")]);
    let o = ok(&[
        "train", "--train", &p(d, "data/train.jsonl"), "--val", &p(d, "data/val.jsonl"), "--labels",
        &p(d, "data/labels.txt"), "--corpus", &p(d, "corpus.txt"), "--config", &cfg, "--seed", "7", "--out",
        &p(d, "m.acm"),
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("seed 7"));
    let history = std::fs::read_to_string(d.join("m.history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);
    let first: Value = serde_json::from_str(history.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 1);

    ok(&["caption", "--model", &p(d, "m.acm"), "--manifest", &p(d, "data/val.jsonl"), "--out", &p(d, "preds.jsonl")]);
    let preds = std::fs::read_to_string(d.join("preds.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 4);
    ok(&["evaluate", "--predictions", &p(d, "preds.jsonl"), "--references", &p(d, "data/val.jsonl"), "--out", &p(d, "r.json")]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["clips"].as_array().unwrap().len(), 4);

    std::fs::write(d.join("empty.jsonl"), "").unwrap();
    let o = sedcap(&["caption", "--model", &p(d, "m.acm"), "--manifest", &p(d, "empty.jsonl"), "--out", &p(d, "x.jsonl")]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let names: Vec<String> = listing(d).iter().map(|f| f.strip_prefix(d).unwrap().to_string_lossy().into_owned()).collect();
    assert!(names.iter().all(|n| !n.contains(".tmp")), "{names:?}");
}

#[test]
fn evaluate_fixture_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "r.json");
    let o = ok(&[
        "evaluate", "--predictions", &core_data("metrics_predictions.jsonl"), "--references",
        &core_data("metrics_references.jsonl"), "--spice", &core_data("metrics_spice.jsonl"), "--out", &out,
    ]);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("BLEU-1") && table.contains("SPIDEr"), "{table}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let oracle: Value = serde_json::from_str(&std::fs::read_to_string(core_data("metrics_oracle.json")).unwrap()).unwrap();
    for key in ["bleu1", "cider", "spider"] {
        let (a, b) = (report[key].as_f64().unwrap(), oracle[key].as_f64().unwrap());
        assert!((a - b).abs() < 1e-10, "{key} {a} vs {b}");
    }
}

#[test]
fn evaluate_identity_and_missing_ids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let refs: Vec<Value> = std::fs::read_to_string(core_data("metrics_references.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let key = refs[0].as_object().unwrap().keys().find(|k| *k != "clip_id").unwrap().clone();
    let preds: String = refs
        .iter()
        .map(|r| format!("{}\n", serde_json::json!({"clip_id": r["clip_id"], "caption": r[&key][0]})))
        .collect();
    std::fs::write(d.join("p.jsonl"), &preds).unwrap();
    ok(&["evaluate", "--predictions", &p(d, "p.jsonl"), "--references", &core_data("metrics_references.jsonl"), "--out", &p(d, "r.json")]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["bleu1"].as_f64().unwrap(), 1.0);

    let extra = format!("{preds}{}\n", serde_json::json!({"clip_id": "c99", "caption": "a dog"}));
    std::fs::write(d.join("q.jsonl"), extra).unwrap();
    let o = sedcap(&["evaluate", "--predictions", &p(d, "q.jsonl"), "--references", &core_data("metrics_references.jsonl"), "--out", &p(d, "s.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("c99"), "{}", stderr(&o));
}

#[test]
fn gradcheck_json_and_negative_control() {
    let o = ok(&["gradcheck", "--json", "--seeds", "2"]);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], true);
    let o = sedcap(&["gradcheck", "--seeds", "1", "--perturb-backward"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"sead": 1}"#).unwrap();
    let o = sedcap(&["train-embeddings", "--manifest", "x", "--out", "y", "--config", &p(dir.path(), "c.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sead"));
}
