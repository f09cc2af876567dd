use std::path::Path;
use std::process::{Command, Output};

fn misattrib(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_misattrib"))
        .current_dir(dir)
        .env_remove("MISATTRIB_STORE")
        .env_remove("MISATTRIB_BACKENDS")
        .env_remove("MISATTRIB_TOKENS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn builtin_taxonomy_validates() {
    let dir = tempfile::tempdir().unwrap();
    let o = misattrib(dir.path(), &["taxonomy", "validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("6 first-level, 15 second-level"));
}

#[test]
fn broken_taxonomy_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let shown = misattrib(dir.path(), &["taxonomy", "show"]);
    let broken = stdout(&shown).replacen("label_en = \"Process Error\"", "label_en = \"Result Error\"", 1);
    std::fs::write(dir.path().join("t.toml"), broken).unwrap();
    let o = misattrib(dir.path(), &["taxonomy", "validate", "--file", "t.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error[InvalidTaxonomy]"));
}

#[test]
fn reference_shape_stats() {
    let dir = tempfile::tempdir().unwrap();
    let o = misattrib(dir.path(), &["ingest", "--fixture", "reference-shape"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&misattrib(dir.path(), &["stats"]));
    assert!(text.contains("total: 21,702"), "{text}");
    assert!(text.contains("train: 18,806"));
    assert!(text.contains("test: 2,896"));
}

#[test]
fn gold_replay_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    assert!(misattrib(dir.path(), &["ingest", "--fixture", "gold", "--size", "120"]).status.success());
    let o = misattrib(dir.path(), &["--backend", "gold-replay", "--report-format", "json", "judge", "--split", "test"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let mean = &report["mean"];
    for key in ["pearson", "spearman", "kendall_tau", "precision", "recall", "f1", "accuracy", "micro_f1"] {
        let v = mean[key].as_f64().unwrap_or_else(|| panic!("{key} missing in {mean}"));
        assert!((v - 1.0).abs() < 1e-12, "{key} = {v}");
    }
}

#[test]
fn missing_backend_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(misattrib(dir.path(), &["judge"]).status.code(), Some(2));
    assert_eq!(misattrib(dir.path(), &["no-such-command"]).status.code(), Some(2));
}

#[test]
fn unknown_backend_reports_code() {
    let dir = tempfile::tempdir().unwrap();
    assert!(misattrib(dir.path(), &["ingest", "--fixture", "gold", "--size", "10"]).status.success());
    let o = misattrib(dir.path(), &["--backend", "nope", "judge"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[UnknownBackend]"));
}

#[test]
fn replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    assert!(misattrib(dir.path(), &["ingest", "--fixture", "gold", "--size", "150"]).status.success());
    let run = |mode: &str| {
        let o = misattrib(
            dir.path(),
            &["--backend", "programmed", "--seed", "11", "--cassette", mode, "judge", "--replicates", "2"],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let recorded = run("record");
    let first = run("replay");
    let second = run("replay");
    assert_eq!(first, second);
    let body = |s: &str| s.lines().filter(|l| !l.starts_with("cassette")).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&recorded), body(&first));
}

#[test]
fn replay_without_cassette_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(misattrib(dir.path(), &["ingest", "--fixture", "gold", "--size", "10"]).status.success());
    let o = misattrib(dir.path(), &["--backend", "programmed", "--cassette", "replay", "judge"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[CassetteMiss]"));
}

#[test]
fn pairwise_and_sft_export() {
    let dir = tempfile::tempdir().unwrap();
    assert!(misattrib(dir.path(), &["ingest", "--fixture", "gold", "--size", "60"]).status.success());
    let mut runs = Vec::new();
    for backend in ["gold-replay", "programmed"] {
        let o = misattrib(dir.path(), &["--backend", backend, "judge", "--replicates", "1"]);
        let err = stderr(&o);
        runs.push(err.trim().rsplit(' ').next().unwrap().to_string());
    }
    let o = misattrib(dir.path(), &["pairwise", "build", "--id", "s1", "--run-a", &runs[0], "--run-b", &runs[1]]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("study s1: "));

    let o = misattrib(dir.path(), &["export-sft", "--split", "test", "--out", "sft.jsonl", "--trainer-config", "trainer.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = std::fs::read_to_string(dir.path().join("sft.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 60);
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["instruction"].is_string() && v["output"].is_string());
    }
    let doc = std::fs::read_to_string(dir.path().join("trainer.toml")).unwrap();
    assert!(doc.contains("learning_rate = 1.0e-4"));
}

#[test]
fn workflow_commands() {
    let dir = tempfile::tempdir().unwrap();
    assert!(misattrib(dir.path(), &["ingest", "--fixture", "gold", "--size", "30", "--split", "train"]).status.success());
    for (id, role) in [("a1", "base"), ("a2", "base"), ("a3", "base"), ("e1", "expert")] {
        assert!(misattrib(dir.path(), &["workflow", "add-annotator", id, role]).status.success());
    }
    assert_eq!(stdout(&misattrib(dir.path(), &["workflow", "assign"])), "created 30 tasks\n");
    let o = misattrib(dir.path(), &["workflow", "partition", "--batches", "3"]);
    assert_eq!(stdout(&o).lines().count(), 3);
    let o = misattrib(dir.path(), &["workflow", "qc-sample", "--batch", "batch-00"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[BatchNotComplete]"));
}
