//! HTTP API against a replay-backed engine.

mod common;

use serde_json::{json, Value};

use crag::app::Engine;
use crag::llm_gateway::{ChatRequest, Gateway, GatewayError, TemplateId};
use crag::pipeline::{run, Variant};

use common::*;

fn titles(v: &Value) -> Vec<String> {
    v.as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_string()).collect()
}

#[tokio::test]
async fn brazilian_query_session() {
    let app = router_for(replay_engine());
    let (_, responses) = drive_session(&app, &SESSION_SCRIPT[..1]).await;
    let r = &responses[0];
    assert_eq!(r["api"], 1);
    assert_eq!(r["turn"], 0);
    assert_eq!(r["recommendations"][0]["title"], "Elite Squad (2007)");
    assert_eq!(r["recommendations"][0]["rank"], 1);
    assert!(r["reply"].as_str().unwrap().starts_with("You might like: Elite Squad (2007)"));

    let trace = &r["trace"];
    assert_eq!(trace["variant"], "full");
    assert_eq!(trace["k"], 4);
    assert_eq!(trace["cold_start"], false);
    let entities: Vec<&str> = trace["entities"].as_array().unwrap().iter().map(|e| e["title"].as_str().unwrap()).collect();
    assert_eq!(entities, ["City of God (2002)", "Bacurau (2019)"]);
    let raw = trace["raw_retrieval"].as_array().unwrap();
    assert_eq!(raw.len(), 4);
    let reflected = titles(&trace["reflected_retrieval"]);
    assert!(reflected.len() < raw.len());
    assert_eq!(reflected, ["The Enemy Within (2010)"]);
}

#[tokio::test]
async fn message_without_titles_is_cold_start() {
    let app = router_for(replay_engine());
    let (_, responses) = drive_session(&app, &["Can you suggest a funny movie?"]).await;
    let trace = &responses[0]["trace"];
    assert_eq!(trace["cold_start"], true);
    assert!(!titles(&trace["seed_items"]).is_empty());
    assert!(trace["entities"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn trace_can_be_suppressed_and_k_overridden() {
    let app = router_for(replay_engine());
    let (_, created) = call(&app, "POST", "/v1/sessions", None).await;
    let id = created["session_id"].as_str().unwrap();
    let uri = format!("/v1/sessions/{id}/messages?trace=false");
    let (status, body) = call(&app, "POST", &uri, Some(json!({ "text": FIG2_QUERY }))).await;
    assert_eq!(status, 200);
    assert!(body.get("trace").is_none());
    assert_eq!(body["recommendations"][0]["title"], "Elite Squad (2007)");

    let (_, created) = call(&app, "POST", "/v1/sessions", None).await;
    let id = created["session_id"].as_str().unwrap();
    let uri = format!("/v1/sessions/{id}/messages");
    let (status, body) = call(&app, "POST", &uri, Some(json!({ "text": FIG2_QUERY, "k": 0 }))).await;
    assert_eq!(status, 200);
    assert_eq!(body["trace"]["k"], 0);
    assert!(body["trace"]["raw_retrieval"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn client_errors() {
    let app = router_for(replay_engine());
    let (status, body) = call(&app, "POST", "/v1/sessions/nope/messages", Some(json!({ "text": "hi" }))).await;
    assert_eq!(status, 404);
    assert_eq!(body["api"], 1);
    let (status, _) = call(&app, "GET", "/v1/sessions/nope", None).await;
    assert_eq!(status, 404);

    let (_, created) = call(&app, "POST", "/v1/sessions", None).await;
    let uri = format!("/v1/sessions/{}/messages", created["session_id"].as_str().unwrap());
    let (status, body) = call(&app, "POST", &uri, Some(json!({ "text": "   " }))).await;
    assert_eq!(status, 400);
    assert!(body["error"].as_str().unwrap().contains("empty"));
    let (status, _) = call(&app, "POST", &uri, Some(json!({ "utterance": "hi" }))).await;
    assert_eq!(status, 400);
    let (status, _) = call(&app, "POST", &uri, None).await;
    assert_eq!(status, 400);
}

#[tokio::test]
async fn healthz_reports_the_catalog() {
    let engine = replay_engine();
    let (items, catalog) = (engine.db.len(), engine.db.catalog_len());
    let app = router_for(engine);
    let (status, body) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(status, 200);
    assert_eq!(body["api"], 1);
    assert_eq!(body["items"], items);
    assert_eq!(body["catalog"], catalog);
}

fn engine_with(f: impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static) -> Engine {
    let dir = tempfile::tempdir().unwrap();
    Engine::from_dialogues(app_config(dir.path()), corpus(), Gateway::from_fn("m", f)).unwrap()
}

#[tokio::test]
async fn backend_failures_map_to_5xx() {
    let exhausted = engine_with(|_| {
        Err(GatewayError::Transport {
            attempts: 5,
            message: "429 Too Many Requests".into(),
        })
    });
    let app = router_for(exhausted);
    let (_, created) = call(&app, "POST", "/v1/sessions", None).await;
    let uri = format!("/v1/sessions/{}/messages", created["session_id"].as_str().unwrap());
    let (status, body) = call(&app, "POST", &uri, Some(json!({ "text": "hello" }))).await;
    assert_eq!(status, 503, "{body}");

    // A generator that only names unknown titles leaves nothing to recommend.
    let unlinkable = engine_with(|req| {
        Ok(match req.template {
            TemplateId::Recommend => "Nonexistent Film\nAnother Missing Film".into(),
            TemplateId::ColdStartSeeds => "Superbad".into(),
            _ => "NO".into(),
        })
    });
    let app = router_for(unlinkable);
    let (_, created) = call(&app, "POST", "/v1/sessions", None).await;
    let uri = format!("/v1/sessions/{}/messages", created["session_id"].as_str().unwrap());
    let (status, body) = call(&app, "POST", &uri, Some(json!({ "text": "hello" }))).await;
    assert_eq!(status, 502, "{body}");
}

#[tokio::test]
async fn session_state_equals_rerunning_the_turns() {
    let app = router_for(replay_engine());
    let (id, responses) = drive_session(&app, SESSION_SCRIPT).await;
    assert_eq!(responses[1]["turn"], 2);

    let (status, session) = call(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(status, 200);
    let turns = session["turns"].as_array().unwrap();
    assert_eq!(turns.len(), 4);
    assert_eq!(turns[1]["speaker"], "SYSTEM");
    assert_eq!(turns[1]["text"], responses[0]["reply"]);

    // Rebuild the prefix from scratch and replay it through the pipeline.
    let engine = replay_engine();
    let mut prefix = engine.single_turn(SESSION_SCRIPT[0]).unwrap().0;
    prefix.turns.push(crag::corpus::Utterance::new(
        crag::corpus::Speaker::System,
        responses[0]["reply"].as_str().unwrap(),
    ));
    let second = engine.single_turn(SESSION_SCRIPT[1]).unwrap().0;
    prefix.turns.extend(second.turns);
    let trace = run(&prefix, &engine.config.pipeline, &engine.inputs()).unwrap();
    assert_eq!(engine.config.pipeline.variant, Variant::Full);
    let fresh: Vec<&str> = trace.final_recs.iter().map(|c| engine.db.catalog_title(*c)).collect();
    let served: Vec<&str> = responses[1]["recommendations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["title"].as_str().unwrap())
        .collect();
    assert_eq!(fresh, served);
    assert_eq!(session["last_trace"], serde_json::to_value(&trace).unwrap());
}
