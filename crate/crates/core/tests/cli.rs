//! The `crag` binary end to end against the checked-in fixtures.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use common::*;

fn crag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crag"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn ok(out: Output) -> Vec<u8> {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

/// A temp dir holding a config and a model fitted by the binary.
fn fitted() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = temp_config(dir.path());
    ok(crag(&["fit", "-c", cfg.to_str().unwrap()]));
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_writes_a_model_that_satisfies_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = temp_config(dir.path());
    let out = json(&ok(crag(&["fit", "-c", s(&cfg), "--lambda", "100"])));
    assert_eq!(out["lambda"], 100.0);
    assert!(out["max_constraint_violation"].as_f64().unwrap() <= 1e-10);
    assert!(dir.path().join("model.bin").exists());
    assert_eq!(out["items"].as_u64().unwrap() as usize, MOVIES.len());
}

#[test]
fn full_run_is_byte_identical_across_replays() {
    let (_dir, cfg) = fitted();
    let args = ["run", "-c", s(&cfg), "--variant", "full", "--text", FIG2_QUERY];
    let first = ok(crag(&args));
    for _ in 0..2 {
        assert_eq!(ok(crag(&args)), first);
    }
    let out = json(&first);
    assert_eq!(out["recommendations"][0], "Elite Squad (2007)");
    let recs: Vec<&str> = out["recommendations"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(recs.contains(&"The Enemy Within (2010)"));
}

#[test]
fn zero_shot_run_has_empty_retrieval() {
    let (_dir, cfg) = fitted();
    let out = json(&ok(crag(&["run", "-c", s(&cfg), "--variant", "zero_shot", "--text", FIG2_QUERY])));
    assert_eq!(out["k"], 0);
    assert!(out["trace"]["raw_retrieval"].as_array().unwrap().is_empty());
    assert!(!out["recommendations"].as_array().unwrap().is_empty());
}

#[test]
fn record_and_dialogue_prefixes_agree() {
    let (_dir, cfg) = fitted();
    let a = json(&ok(crag(&["run", "-c", s(&cfg), "--record", "0"])));
    let b = json(&ok(crag(&["run", "-c", s(&cfg), "--dialogue", "test-00", "--turns", "1"])));
    assert_eq!(a["recommendations"], b["recommendations"]);
    assert_eq!(a["recommendations"][0], "Elite Squad (2007)");
}

#[test]
fn eval_reproduces_the_golden_report() {
    let (dir, cfg) = fitted();
    let out_dir = dir.path().join("eval");
    let summary = json(&ok(crag(&["eval", "-c", s(&cfg), "--k", "20", "--backend", "replay", "--out", s(&out_dir)])));
    assert_eq!(summary["records"], 10);
    assert_eq!(summary["reports"], 3);
    let report = std::fs::read(out_dir.join("report.jsonl")).unwrap();
    let golden = fixtures_dir().join("eval_report.jsonl");
    if std::env::var("CRAG_REGEN_FIXTURES").is_ok_and(|v| v == "1") || !golden.exists() {
        std::fs::write(&golden, &report).unwrap();
    }
    assert_eq!(report, std::fs::read(&golden).unwrap(), "report differs from the golden file");
    for line in String::from_utf8(report).unwrap().lines() {
        let r = json(line.as_bytes());
        let (r5, r10, r20) = (r["recall_at"]["5"].as_f64().unwrap(), r["recall_at"]["10"].as_f64().unwrap(), r["recall_at"]["20"].as_f64().unwrap());
        assert!(r5 <= r10 && r10 <= r20);
    }
    assert!(out_dir.join("plot.csv").exists());
    let confusion = std::fs::read_to_string(out_dir.join("confusion.csv")).unwrap();
    assert!(confusion.starts_with("rank,r1,"));
}

#[test]
fn eval_groups_and_cold_start_subset() {
    let (dir, cfg) = fitted();
    let out_dir = dir.path().join("eval");
    ok(crag(&[
        "eval", "-c", s(&cfg), "--k", "5", "--variant", "full", "--cutoff-year", "2010", "--detail", "--out", s(&out_dir),
    ]));
    let text = std::fs::read_to_string(out_dir.join("report.jsonl")).unwrap();
    let groups: Vec<Value> = text.lines().map(|l| json(l.as_bytes())["group"].clone()).collect();
    assert_eq!(groups, [Value::Null, "before".into(), "after".into()]);

    let summary = json(&ok(crag(&["eval", "-c", s(&cfg), "--k", "5", "--cold-start-only", "--out", s(&out_dir)])));
    assert_eq!(summary["records"], 1);
}

#[test]
fn stats_counts_the_test_split() {
    let (_dir, cfg) = fitted();
    let out = json(&ok(crag(&["stats", "-c", s(&cfg)])));
    assert_eq!(out["conversations"], 9);
    assert_eq!(out["conversations_without_items"], 1);
}

#[test]
fn failures_exit_with_a_class_code() {
    let (dir, cfg) = fitted();
    let missing = crag(&["run", "-c", "/nonexistent/crag.toml", "--text", "x"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("crag: input error:"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[data]\ndialogues = \"d\"\nmodel = \"m\"\n[cf]\nlamda = 1.0\n").unwrap();
    assert_eq!(crag(&["fit", "-c", s(&bad)]).status.code(), Some(2));

    let miss = crag(&["run", "-c", s(&cfg), "--text", "A question nobody recorded"]);
    assert_eq!(miss.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&miss.stderr).contains("replay miss"));

    assert_eq!(crag(&["run", "-c", s(&cfg), "--record", "99"]).status.code(), Some(2));
}
