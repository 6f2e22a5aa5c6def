//! Checked-in fixtures stay in sync with the scripted responder.
//!
//! Set `CRAG_REGEN_FIXTURES=1` to rewrite `tests/fixtures/`; otherwise the
//! regenerated bytes must match the files on disk.

mod common;

use std::path::Path;
use std::sync::Arc;

use crag::app::Engine;
use crag::corpus::write_dialogues;
use crag::llm_gateway::{FnBackend, Gateway, RecordingBackend};
use crag::pipeline::{run, PipelineConfig, Variant};

use common::*;

fn regen() -> bool {
    std::env::var("CRAG_REGEN_FIXTURES").is_ok_and(|v| v == "1")
}

fn check_or_write(path: &Path, bytes: &[u8]) {
    if regen() || !path.exists() {
        std::fs::write(path, bytes).unwrap();
        return;
    }
    let disk = std::fs::read(path).unwrap();
    assert!(
        disk == bytes,
        "{} is stale; rerun with CRAG_REGEN_FIXTURES=1",
        path.display()
    );
}

/// Issues every request the replay-based tests make.
fn exercise(engine: &Engine) {
    let base = engine.config.pipeline.clone();
    let inputs = engine.inputs();
    let variants = [Variant::Full, Variant::NR2, Variant::NR12, Variant::ZeroShot];
    for text in QUERIES {
        let (dialogue, _) = engine.single_turn(text).unwrap();
        for &variant in &variants {
            for &k in SWEPT_KS {
                let cfg = PipelineConfig { variant, k, ..base.clone() };
                run(&dialogue, &cfg, &inputs).unwrap();
            }
        }
    }
    let records = engine.eval_records();
    for &variant in &variants {
        for &k in SWEPT_KS {
            let cfg = PipelineConfig { variant, k, ..base.clone() };
            for r in &records {
                run(&r.prefix, &cfg, &inputs).unwrap();
            }
        }
    }
}

#[test]
fn fixtures_match_the_scripted_responder() {
    let dir = fixtures_dir();
    std::fs::create_dir_all(&dir).unwrap();

    let mut dialogues = Vec::new();
    write_dialogues(&mut dialogues, &corpus()).unwrap();
    check_or_write(&dir.join("dialogues.jsonl"), &dialogues);

    let relative = config_text(Path::new("dialogues.jsonl"), Path::new("transcript.jsonl"), Path::new("model.bin"));
    check_or_write(&dir.join("crag.toml"), relative.as_bytes());

    let tmp = tempfile::tempdir().unwrap();
    let cfg = app_config(tmp.path());
    let recorder = Arc::new(RecordingBackend::in_memory(FnBackend(scripted)));
    let gateway = Gateway::new(recorder.clone(), cfg.backend.model.clone());
    let engine = Engine::from_dialogues(cfg, corpus(), gateway).unwrap();
    exercise(&engine);
    let app = router_for(engine);
    tokio::runtime::Runtime::new().unwrap().block_on(drive_session(&app, SESSION_SCRIPT));

    let mut transcript = Vec::new();
    recorder.transcript().write_to(&mut transcript).unwrap();
    check_or_write(&dir.join("transcript.jsonl"), &transcript);
}
