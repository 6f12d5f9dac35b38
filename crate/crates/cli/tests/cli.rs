use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmcap_cli::report::AttributionReport;
use mmcap_cli::CaptionLine;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmcap"))
        .args(args)
        .env("MMCAP_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Failing invocation's parsed diagnostic.
fn fails(args: &[&str]) -> Value {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} succeeded");
    serde_json::from_slice(&out.stderr).expect("diagnostic is one JSON object")
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn synthetic(dir: &Path, clips: &str, seed: &str) -> PathBuf {
    ok(&["make-synthetic", "--out-dir", &s(dir), "--clips", clips, "--seed", seed]);
    dir.join("manifest.json")
}

fn tiny_config(dir: &Path, extra: Value) -> PathBuf {
    let mut cfg = serde_json::json!({
        "t_v": 10, "t_a": 10, "visual_dim": 16, "audio_dim": 16, "visual_proj_dim": 8,
        "visual_hidden": 8, "audio_hidden": 4, "embed_dim": 8, "joint_dim": 8, "blocks": 1,
        "batch_size": 4, "lr": 2e-3, "max_epochs": 3, "val_split": "train", "seed": 5
    });
    cfg.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    let p = dir.join("cfg.json");
    std::fs::write(&p, cfg.to_string()).unwrap();
    p
}

/// Trains the tiny model on an 8-clip synthetic set; returns (manifest, run dir).
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let manifest = synthetic(&dir.join("syn"), "8", "7");
    let vocab = dir.join("vocab.json");
    ok(&["build-vocab", "--manifest", &s(&manifest), "--out", &s(&vocab)]);
    let cfg = tiny_config(dir, serde_json::json!({}));
    let out = dir.join("run");
    ok(&["train", "--config", &s(&cfg), "--manifest", &s(&manifest), "--vocab", &s(&vocab), "--out-dir", &s(&out)]);
    (manifest, out)
}

#[test]
fn build_vocab_counts_and_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let manifest = d.path().join("m.json");
    std::fs::write(
        &manifest,
        r#"[{"id": "c1", "visual_path": "c1.mmcf", "captions": ["a man runs"], "split": "train"},
            {"id": "c2", "visual_path": "c2.mmcf", "captions": ["a man sings"], "split": "train"}]"#,
    )
    .unwrap();
    let (v1, v2, v3) = (d.path().join("v1.json"), d.path().join("v2.json"), d.path().join("v3.json"));
    ok(&["build-vocab", "--manifest", &s(&manifest), "--out", &s(&v1)]);
    ok(&["build-vocab", "--manifest", &s(&manifest), "--out", &s(&v2)]);
    ok(&["build-vocab", "--manifest", &s(&manifest), "--out", &s(&v3), "--min-freq", "1"]);
    let tokens = |p: &Path| -> Vec<String> {
        let v: Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        serde_json::from_value(v["tokens"].clone()).unwrap()
    };
    assert_eq!(tokens(&v1), ["<pad>", "<sos>", "<eos>", "<unk>", "a", "man"]);
    assert_eq!(std::fs::read(&v1).unwrap(), std::fs::read(&v2).unwrap());
    assert_eq!(tokens(&v3).len(), 4 + 4);
    assert_eq!(fails(&["build-vocab", "--manifest", "/nonexistent/m.json", "--out", &s(&v1)])["code"], "io");
}

#[test]
fn make_synthetic_contract() {
    let d = tempfile::tempdir().unwrap();
    let m1 = synthetic(&d.path().join("a"), "8", "7");
    synthetic(&d.path().join("b"), "8", "7");
    let records: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(&m1).unwrap()).unwrap();
    assert_eq!(records.len(), 8);
    let mut features: Vec<_> = std::fs::read_dir(d.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".mmcf"))
        .collect();
    features.sort();
    assert_eq!(features.len(), 16);
    for name in features.iter().chain([&"manifest.json".to_string(), &"lexicon.json".to_string()]) {
        assert_eq!(std::fs::read(d.path().join("a").join(name)).unwrap(), std::fs::read(d.path().join("b").join(name)).unwrap());
    }
    // the visual file depends only on the noun (second word), never on the verb
    let load = |r: &Value, key: &str| mmcap::dataio::load_feature_matrix(&d.path().join("a").join(r[key].as_str().unwrap())).unwrap();
    let word = |r: &Value, i: usize| r["captions"][0].as_str().unwrap().split(' ').nth(i).unwrap().to_owned();
    for a in &records {
        for b in &records {
            assert_eq!(load(a, "visual_path") == load(b, "visual_path"), word(a, 1) == word(b, 1));
            assert_eq!(load(a, "audio_path") == load(b, "audio_path"), word(a, 3) == word(b, 3));
        }
    }
}

#[test]
fn training_is_reproducible_and_reports_are_valid() {
    let d = tempfile::tempdir().unwrap();
    let (manifest, run_dir) = trained(d.path());
    let log = std::fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "train_loss", "val_loss", "lr"] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
    }
    let again = d.path().join("again");
    let cfg = d.path().join("cfg.json");
    ok(&["train", "--config", &s(&cfg), "--manifest", &s(&manifest), "--vocab", &s(&d.path().join("vocab.json")), "--out-dir", &s(&again)]);
    assert_eq!(std::fs::read(again.join("train_log.jsonl")).unwrap(), log.as_bytes());
    assert_eq!(std::fs::read(again.join("model.mmck")).unwrap(), std::fs::read(run_dir.join("model.mmck")).unwrap());

    let ckpt = s(&run_dir.join("model.mmck"));
    let caps = d.path().join("caps.json");
    ok(&["caption", "--checkpoint", &ckpt, "--manifest", &s(&manifest), "--split", "train", "--out", &s(&caps)]);
    let lines: Vec<CaptionLine> = serde_json::from_str(&std::fs::read_to_string(&caps).unwrap()).unwrap();
    assert_eq!(lines.len(), 8);

    let ex = d.path().join("ex.jsonl");
    let html = d.path().join("ex.html");
    ok(&[
        "explain", "--checkpoint", &ckpt, "--manifest", &s(&manifest), "--split", "train", "--out", &s(&ex),
        "--lexicon", &s(&d.path().join("syn/lexicon.json")), "--html", &s(&html),
    ]);
    let text = std::fs::read_to_string(&ex).unwrap();
    assert_eq!(text.lines().count(), 8);
    for (line, cap) in text.lines().zip(&lines) {
        let r: AttributionReport = serde_json::from_str(line).unwrap();
        r.check(20).unwrap();
        assert_eq!(r.words.join(" "), cap.caption);
        assert!(r.lexicon.is_some());
    }
    assert!(std::fs::read_to_string(&html).unwrap().starts_with("<!DOCTYPE html>"));

    let empty = d.path().join("empty.json");
    ok(&["caption", "--checkpoint", &ckpt, "--manifest", &s(&manifest), "--split", "val", "--out", &s(&empty)]);
    assert_eq!(std::fs::read_to_string(&empty).unwrap().trim(), "[]");
}

#[test]
fn missing_feature_names_the_clip() {
    let d = tempfile::tempdir().unwrap();
    let (manifest, run_dir) = trained(d.path());
    let records: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    let victim = records[2]["id"].as_str().unwrap();
    std::fs::remove_file(d.path().join("syn").join(records[2]["audio_path"].as_str().unwrap())).unwrap();
    let err = fails(&[
        "caption", "--checkpoint", &s(&run_dir.join("model.mmck")), "--manifest", &s(&manifest), "--split", "train", "--out",
        &s(&d.path().join("x.json")),
    ]);
    assert_eq!(err["code"], "missing_feature");
    assert!(err["message"].as_str().unwrap().contains(victim));
}

#[test]
fn visual_only_runs_without_audio() {
    let d = tempfile::tempdir().unwrap();
    let manifest = synthetic(&d.path().join("syn"), "8", "7");
    let mut records: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    for r in &mut records {
        r.as_object_mut().unwrap().remove("audio_path");
    }
    let silent = d.path().join("syn/silent.json");
    std::fs::write(&silent, serde_json::to_string(&records).unwrap()).unwrap();
    let vocab = d.path().join("vocab.json");
    ok(&["build-vocab", "--manifest", &s(&silent), "--out", &s(&vocab)]);
    let cfg = tiny_config(d.path(), serde_json::json!({ "mode": "visual_only" }));
    let out = d.path().join("v2v");
    ok(&["train", "--config", &s(&cfg), "--manifest", &s(&silent), "--vocab", &s(&vocab), "--out-dir", &s(&out)]);
    let ex = d.path().join("ex.jsonl");
    ok(&[
        "explain", "--checkpoint", &s(&out.join("model.mmck")), "--manifest", &s(&silent), "--split", "train", "--out", &s(&ex),
    ]);
    for line in std::fs::read_to_string(&ex).unwrap().lines() {
        let r: AttributionReport = serde_json::from_str(line).unwrap();
        r.check(10).unwrap();
        for a in &r.attributions {
            assert_eq!(a.e_a, 0.0);
            assert_eq!(a.decision, mmcap::aggregation::Decision::Visual);
        }
    }
    // the audio-visual default refuses the audio-less manifest
    let err = fails(&["train", "--manifest", &s(&silent), "--vocab", &s(&vocab), "--out-dir", &s(&out), "--config", &s(&tiny_config(d.path(), serde_json::json!({})))]);
    assert_eq!(err["code"], "missing_feature");
}

#[test]
fn config_and_vocab_must_agree() {
    let d = tempfile::tempdir().unwrap();
    let manifest = synthetic(&d.path().join("syn"), "8", "7");
    let vocab = d.path().join("vocab.json");
    ok(&["build-vocab", "--manifest", &s(&manifest), "--out", &s(&vocab), "--min-freq", "1"]);
    let cfg = tiny_config(d.path(), serde_json::json!({}));
    let err = fails(&["train", "--config", &s(&cfg), "--manifest", &s(&manifest), "--vocab", &s(&vocab), "--out-dir", &s(&d.path().join("o"))]);
    assert_eq!(err["code"], "config");
    let err = fails(&["train", "--config", &s(&cfg), "--vocab", &s(&vocab), "--out-dir", &s(&d.path().join("o"))]);
    assert_eq!(err["code"], "config");
}

#[test]
fn eval_scores_and_checks_ids() {
    let d = tempfile::tempdir().unwrap();
    let manifest = synthetic(&d.path().join("syn"), "8", "7");
    let records: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    let mut cands: Vec<Value> = records
        .iter()
        .map(|r| serde_json::json!({ "id": r["id"], "caption": r["captions"][0] }))
        .collect();
    let write = |name: &str, c: &[Value]| {
        let p = d.path().join(name);
        std::fs::write(&p, serde_json::to_string(c).unwrap()).unwrap();
        s(&p)
    };
    let (c1, o1) = (write("c1.json", &cands), s(&d.path().join("o1.json")));
    ok(&["eval", "--candidates", &c1, "--manifest", &s(&manifest), "--split", "train", "--out", &o1]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&o1).unwrap()).unwrap();
    assert_eq!(report["bleu4"], 1.0);
    assert_eq!(report["clip_count"], 8);
    cands.reverse();
    let (c2, o2) = (write("c2.json", &cands), s(&d.path().join("o2.json")));
    ok(&["eval", "--candidates", &c2, "--manifest", &s(&manifest), "--split", "train", "--out", &o2]);
    assert_eq!(std::fs::read(&o1).unwrap(), std::fs::read(&o2).unwrap());
    cands.push(serde_json::json!({ "id": "ghost", "caption": "a dog" }));
    let c3 = write("c3.json", &cands);
    let err = fails(&["eval", "--candidates", &c3, "--manifest", &s(&manifest), "--split", "train", "--out", &o2]);
    assert_eq!(err["code"], "unknown_ids");
    assert!(err["message"].as_str().unwrap().contains("ghost"));
}

#[test]
fn worker_cap_reads_env() {
    assert!(mmcap_cli::workers() >= 1);
}
