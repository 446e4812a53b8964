use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn entmark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entmark")).args(args).env_remove("ENTMARK_SEED").output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_model(dir: &Path, json: &str) -> std::path::PathBuf {
    let path = dir.join("model.json");
    std::fs::write(&path, json).unwrap();
    path
}

#[test]
fn generate_then_detect_in_separate_processes() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("key.json");
    let model = write_model(dir.path(), r#"{"kind": "uniform", "len": 1024}"#);
    let text = dir.path().join("text.json");

    assert_eq!(
        entmark(&["keygen", "--scheme", "complete", "--lambda", "8", "--out", p(&key), "--seed", "1"]).status.code(),
        Some(0)
    );
    let gen = entmark(&[
        "generate",
        "--key",
        p(&key),
        "--model",
        p(&model),
        "--prompt",
        "hi",
        "--out",
        p(&text),
        "--seed",
        "2",
    ]);
    assert_eq!(gen.status.code(), Some(0), "{}", String::from_utf8_lossy(&gen.stderr));

    let det = entmark(&["detect", "--key", p(&key), "--in", p(&text)]);
    assert_eq!(det.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&det.stdout).unwrap();
    assert_eq!(report["verdict"], Value::Bool(true));

    let other = dir.path().join("other.json");
    entmark(&["keygen", "--scheme", "complete", "--lambda", "8", "--out", p(&other), "--seed", "3"]);
    assert_eq!(entmark(&["detect", "--key", p(&other), "--in", p(&text)]).status.code(), Some(1));
}

#[test]
fn seeded_commands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), r#"{"kind": "bernoulli", "p": 0.3, "len": 64}"#);
    let key = dir.path().join("k.json");
    entmark(&["keygen", "--scheme", "substring", "--lambda", "8", "--out", p(&key), "--seed", "9"]);
    let a = entmark(&["generate", "--key", p(&key), "--model", p(&model), "--seed", "4"]);
    let b = entmark(&["generate", "--key", p(&key), "--model", p(&model), "--seed", "4"]);
    assert_eq!(a.stdout, b.stdout);
    let c = Command::new(env!("CARGO_BIN_EXE_entmark"))
        .args(["generate", "--key", p(&key), "--model", p(&model), "--seed", "5"])
        .env("ENTMARK_SEED", "4")
        .output()
        .unwrap();
    assert_eq!(a.stdout, c.stdout, "ENTMARK_SEED overrides --seed");
}

#[test]
fn keygen_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("key.json");
    let args = ["keygen", "--scheme", "simple", "--lambda", "8", "--b", "4", "--out", p(&key)];
    assert_eq!(entmark(&args).status.code(), Some(0));
    let before = std::fs::read(&key).unwrap();
    assert_eq!(entmark(&args).status.code(), Some(2));
    assert_eq!(std::fs::read(&key).unwrap(), before);
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(entmark(&forced).status.code(), Some(0));
}

#[test]
fn errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("key.json");
    entmark(&["keygen", "--scheme", "complete", "--lambda", "8", "--out", p(&key)]);
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, r#"{"token_ids": []}"#).unwrap();
    assert_eq!(entmark(&["detect", "--key", p(&key), "--in", p(&empty)]).status.code(), Some(2));
    assert_eq!(entmark(&["detect", "--key", p(&key), "--in", "/nonexistent/text.json"]).status.code(), Some(2));
    let unknown = entmark(&["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
}

#[test]
fn bare_bit_strings_are_detectable() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("key.json");
    entmark(&["keygen", "--scheme", "complete", "--lambda", "8", "--out", p(&key), "--seed", "1"]);
    let bits = dir.path().join("bits.txt");
    std::fs::write(&bits, "0".repeat(300)).unwrap();
    assert_eq!(entmark(&["detect", "--key", p(&key), "--in", p(&bits)]).status.code(), Some(1));
}

#[test]
fn attack_output_is_not_detected() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("key.json");
    entmark(&["keygen", "--scheme", "complete", "--lambda", "8", "--out", p(&key), "--seed", "1"]);
    let cfg = dir.path().join("oracle.json");
    std::fs::write(&cfg, r#"{"key": "key.json", "model": {"kind": "uniform", "len": 512}}"#).unwrap();
    let out = dir.path().join("attacked.json");
    let a = entmark(&["attack", "--key-oracle-config", p(&cfg), "--out", p(&out), "--seed", "3"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let text: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let len = text["token_ids"].as_array().unwrap().len() as u64;
    assert_eq!(text["ledger"]["queries"].as_u64(), Some(len));
    assert_eq!(entmark(&["detect", "--key", p(&key), "--in", p(&out)]).status.code(), Some(1));
}

#[test]
fn ngram_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.txt");
    std::fs::write(&corpus, "the quick brown fox jumps over the lazy dog. ".repeat(50)).unwrap();
    let (table, spec, codec) = (dir.path().join("t.entm"), dir.path().join("m.json"), dir.path().join("c.json"));
    let t = entmark(&["train-ngram", "--corpus", p(&corpus), "--order", "2", "--table", p(&table), "--out", p(&spec)]);
    assert_eq!(t.status.code(), Some(0), "{}", String::from_utf8_lossy(&t.stderr));
    assert_eq!(
        entmark(&["codec", "--model", p(&spec), "--kind", "huffman", "--out", p(&codec)]).status.code(),
        Some(0)
    );
    let c: Value = serde_json::from_str(&std::fs::read_to_string(&codec).unwrap()).unwrap();
    assert!(c.is_object());

    let key = dir.path().join("key.json");
    entmark(&["keygen", "--scheme", "complete", "--lambda", "4", "--out", p(&key), "--seed", "1"]);
    let g = entmark(&["generate", "--key", p(&key), "--model", p(&spec), "--seed", "2"]);
    assert_eq!(g.status.code(), Some(2), "n-gram models need a codec");
    let g = entmark(&["generate", "--key", p(&key), "--model", p(&spec), "--codec", p(&codec), "--seed", "2"]);
    assert_eq!(g.status.code(), Some(0), "{}", String::from_utf8_lossy(&g.stderr));
    let text: Value = serde_json::from_slice(&g.stdout).unwrap();
    assert!(text["token_ids"].is_array());
}

#[test]
fn experiment_reports_outcome_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(
        &cfg,
        r#"{"experiment": "soundness", "scheme": "complete", "lambda": 16, "trials": 200, "seed": 1, "text_len": 256}"#,
    )
    .unwrap();
    let csv = dir.path().join("m.csv");
    let o = entmark(&["experiment", "--config", p(&cfg), "--csv", p(&csv), "--jobs", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(out["checks"].as_array().unwrap().iter().all(|c| c["passed"] == Value::Bool(true)));
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 1);
}
