use std::path::Path;
use std::process::{Command, Output};

fn ctxdep(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxdep"))
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn signals_before_ingest_is_a_dependency_error() {
    let ws = tempfile::tempdir().unwrap();
    let out = ctxdep(ws.path(), &["signals"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("`ingest`"), "{}", stderr(&out));
}

#[test]
fn bad_config_is_a_validation_error_with_field_path() {
    let ws = tempfile::tempdir().unwrap();
    let cfg = ws.path().join("config.json");
    std::fs::write(&cfg, r#"{"lstm": {"dropout_rate": 1.5}}"#).unwrap();
    let out = ctxdep(ws.path(), &["--config", cfg.to_str().unwrap(), "synth"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("lstm.dropout_rate"), "{}", stderr(&out));

    let out = ctxdep(ws.path(), &["--min-count", "0", "synth"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn wrong_format_is_rejected() {
    let ws = tempfile::tempdir().unwrap();
    let corpus = ws.path().join("corpus.tsv");
    std::fs::write(&corpus, "{\"message\": \"hi\", \"response\": \"hello\"}\n").unwrap();
    let out = ctxdep(ws.path(), &["--corpus", corpus.to_str().unwrap(), "--format", "tsv", "ingest"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("--format"), "{}", stderr(&out));
}

#[test]
fn tsv_ingest_with_flags() {
    let ws = tempfile::tempdir().unwrap();
    let corpus = ws.path().join("corpus.tsv");
    std::fs::write(&corpus, "ctx\tWhy ?\tno idea\nctx\twhy ?\tthe rain\nctx\tbye\tbye\n").unwrap();
    let stop = ws.path().join("stop.txt");
    std::fs::write(&stop, "the\n").unwrap();
    let args = [
        "--corpus",
        corpus.to_str().unwrap(),
        "--format",
        "tsv",
        "--lowercase",
        "--stopwords",
        stop.to_str().unwrap(),
        "--min-responses",
        "2",
    ];
    let out = ctxdep(ws.path(), &[&args[..], &["ingest"]].concat());
    assert!(out.status.success(), "{}", stderr(&out));
    let groups = std::fs::read_to_string(ws.path().join("ingest/groups.jsonl")).unwrap();
    assert_eq!(groups.lines().count(), 2);
    assert!(groups.contains(r#""message":"why""#), "{groups}");

    let first = std::fs::read(ws.path().join("ingest/vocab.json")).unwrap();
    let out = ctxdep(ws.path(), &[&args[..], &["ingest"]].concat());
    assert!(out.status.success());
    assert_eq!(std::fs::read(ws.path().join("ingest/vocab.json")).unwrap(), first);

    let out = ctxdep(ws.path(), &[&args[..], &["signals"]].concat());
    assert!(out.status.success(), "{}", stderr(&out));
    let tsv = std::fs::read_to_string(ws.path().join("signals/signals.tsv")).unwrap();
    // only the "why" group is eligible
    assert_eq!(tsv.lines().count(), 2, "{tsv}");
}

#[test]
fn full_synthetic_pipeline() {
    let ws = tempfile::tempdir().unwrap();
    let out = ctxdep(ws.path(), &["--seed", "3", "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("sign test against"), "{stdout}");
    for f in ["evaluate/report.json", "evaluate/report.txt", "histogram/entropy.csv", "train-lstm/manifest.json"] {
        assert!(ws.path().join(f).exists(), "{f} missing");
    }
    let manifest = std::fs::read_to_string(ws.path().join("evaluate/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 3"), "{manifest}");
}

#[test]
fn print_config_applies_overrides() {
    let ws = tempfile::tempdir().unwrap();
    let out = ctxdep(ws.path(), &["--seed", "7", "print-config"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 7);
    assert_eq!(v["lstm"]["seed"], 7);
}
