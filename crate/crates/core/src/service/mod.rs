//! HTTP API for interactive sessions.
//!
//! Every response carries `"api": 1`. Sessions live in memory and expire
//! after an idle timeout; turns within one session are processed one at a
//! time while different sessions run concurrently.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{info, warn};

use crate::app::Engine;
use crate::corpus::{CatalogId, Dialogue, ItemId, Speaker, Split, Utterance};
use crate::entity_link::{extract_and_link, LinkError, LinkOutcome};
use crate::llm_gateway::GatewayError;
use crate::pipeline::{run, PipelineConfig, PipelineError, PipelineTrace};

pub const API_VERSION: u32 = 1;

struct Session {
    dialogue: Dialogue,
    last_trace: Option<PipelineTrace>,
    last_seen: Instant,
}

pub struct ServiceState {
    engine: Arc<Engine>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    idle: Duration,
}

impl ServiceState {
    pub fn new(engine: Arc<Engine>) -> Self {
        let idle = Duration::from_secs(engine.config.service.session_idle_secs);
        Self::with_idle_timeout(engine, idle)
    }

    pub fn with_idle_timeout(engine: Arc<Engine>, idle: Duration) -> Self {
        Self {
            engine,
            sessions: Mutex::new(HashMap::new()),
            idle,
        }
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, HashMap<String, Arc<tokio::sync::Mutex<Session>>>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Drops sessions idle for longer than the timeout. Sessions currently
    /// in use are kept.
    fn expire(&self) {
        let now = Instant::now();
        self.sessions().retain(|_, s| match s.try_lock() {
            Ok(s) => now.duration_since(s.last_seen) <= self.idle,
            Err(_) => true,
        });
    }

    pub fn session_count(&self) -> usize {
        self.sessions().len()
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/:id", get(get_session))
        .route("/v1/sessions/:id/messages", post(post_message))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: Arc<ServiceState>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "api": API_VERSION, "error": message.into() }))).into_response()
}

async fn healthz(State(state): State<Arc<ServiceState>>) -> Response {
    Json(json!({
        "api": API_VERSION,
        "status": "ok",
        "items": state.engine.db.len(),
        "catalog": state.engine.db.catalog_len(),
        "sessions": state.session_count(),
    }))
    .into_response()
}

async fn create_session(State(state): State<Arc<ServiceState>>) -> Response {
    state.expire();
    let id = uuid::Uuid::new_v4().to_string();
    let session = Session {
        dialogue: Dialogue {
            id: id.clone(),
            date: Utc::now().date_naive(),
            split: Split::Test,
            turns: Vec::new(),
        },
        last_trace: None,
        last_seen: Instant::now(),
    };
    state.sessions().insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    (StatusCode::CREATED, Json(json!({ "api": API_VERSION, "session_id": id }))).into_response()
}

async fn get_session(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> Response {
    state.expire();
    let Some(session) = state.sessions().get(&id).cloned() else {
        return error(StatusCode::NOT_FOUND, format!("unknown session {id}"));
    };
    let mut session = session.lock().await;
    session.last_seen = Instant::now();
    Json(json!({
        "api": API_VERSION,
        "session_id": id,
        "turns": session.dialogue.turns,
        "last_trace": session.last_trace,
    }))
    .into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageRequest {
    pub text: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct MessageQuery {
    #[serde(default = "yes")]
    pub trace: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub rank: usize,
    pub catalog_id: CatalogId,
    pub item_id: ItemId,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<i8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityView {
    pub surface: String,
    pub title: String,
    pub attitude: i8,
    pub method: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTitle {
    pub title: String,
    pub score: f64,
}

/// Stage-by-stage view of one turn, with titles resolved for display.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceView {
    pub k: usize,
    pub variant: String,
    pub entities: Vec<EntityView>,
    pub cold_start: bool,
    pub query_items: Vec<String>,
    pub seed_items: Vec<String>,
    pub raw_retrieval: Vec<ScoredTitle>,
    pub reflected_retrieval: Vec<String>,
    pub raw_recs: Vec<String>,
    pub final_recs: Vec<Recommendation>,
    pub llm_calls: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageResponse {
    pub api: u32,
    pub session_id: String,
    pub turn: usize,
    pub reply: String,
    pub recommendations: Vec<Recommendation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceView>,
}

enum TurnError {
    Link(LinkError),
    Pipeline(PipelineError),
}

impl TurnError {
    fn gateway(&self) -> Option<&GatewayError> {
        match self {
            TurnError::Link(LinkError::Gateway(g)) => Some(g),
            TurnError::Pipeline(p) => p.gateway(),
            TurnError::Link(_) => None,
        }
    }

    fn into_response(self) -> Response {
        let message = match &self {
            TurnError::Link(e) => e.to_string(),
            TurnError::Pipeline(e) => e.to_string(),
        };
        warn!(%message, "turn failed");
        if self.gateway().is_some() {
            error(StatusCode::SERVICE_UNAVAILABLE, message)
        } else {
            error(StatusCode::BAD_GATEWAY, message)
        }
    }
}

struct TurnOutput {
    link: LinkOutcome,
    trace: PipelineTrace,
    user: Utterance,
    cfg: PipelineConfig,
}

fn process_turn(engine: &Engine, dialogue: &Dialogue, text: &str, k: Option<usize>) -> Result<TurnOutput, TurnError> {
    let link = extract_and_link(text, &engine.index, &engine.gateway).map_err(TurnError::Link)?;
    let user = Utterance::new(Speaker::User, text).with_mentions(link.corpus_mentions(&engine.index));
    let mut prefix = dialogue.clone();
    prefix.turns.push(user.clone());
    let mut cfg = engine.config.pipeline.clone();
    if let Some(k) = k {
        cfg.k = k;
    }
    let trace = run(&prefix, &cfg, &engine.inputs()).map_err(TurnError::Pipeline)?;
    Ok(TurnOutput { link, trace, user, cfg })
}

fn recommendations(engine: &Engine, trace: &PipelineTrace) -> Vec<Recommendation> {
    trace
        .final_recs
        .iter()
        .enumerate()
        .map(|(i, c)| Recommendation {
            rank: i + 1,
            catalog_id: *c,
            item_id: engine.db.catalog_item(*c),
            title: engine.db.catalog_title(*c).to_string(),
            rerank_score: trace.rerank_scores.get(c).copied(),
        })
        .collect()
}

fn trace_view(engine: &Engine, out: &TurnOutput, recs: &[Recommendation]) -> TraceView {
    let db = &engine.db;
    let titles = |ids: &[ItemId]| ids.iter().map(|i| db.title(*i).to_string()).collect();
    let cat_titles = |ids: &[CatalogId]| ids.iter().map(|c| db.catalog_title(*c).to_string()).collect();
    let t = &out.trace;
    let mut warnings = out.link.warnings.clone();
    warnings.extend(t.warnings.iter().cloned());
    TraceView {
        k: out.cfg.effective_k(),
        variant: out.cfg.variant.to_string(),
        entities: out
            .link
            .mentions
            .iter()
            .map(|m| EntityView {
                surface: m.surface.clone(),
                title: db.title(m.item).to_string(),
                attitude: m.attitude,
                method: serde_json::to_value(m.method)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
            })
            .collect(),
        cold_start: t.cold_start,
        query_items: titles(&t.query_items),
        seed_items: titles(&t.seed_items),
        raw_retrieval: t
            .raw_retrieval
            .entries
            .iter()
            .map(|e| ScoredTitle {
                title: db.catalog_title(e.catalog_id).to_string(),
                score: e.score,
            })
            .collect(),
        reflected_retrieval: cat_titles(&t.reflected_retrieval),
        raw_recs: cat_titles(&t.raw_recs),
        final_recs: recs.to_vec(),
        llm_calls: out.link.llm_calls + t.llm_calls,
        warnings,
    }
}

/// Text of the system turn appended after a recommendation.
pub fn reply_text(recs: &[Recommendation], n: usize) -> String {
    let titles: Vec<&str> = recs.iter().take(n).map(|r| r.title.as_str()).collect();
    format!("You might like: {}", titles.join("; "))
}

async fn post_message(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    Query(q): Query<MessageQuery>,
    body: Result<Json<MessageRequest>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    if req.text.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "utterance text is empty");
    }
    state.expire();
    let Some(session) = state.sessions().get(&id).cloned() else {
        return error(StatusCode::NOT_FOUND, format!("unknown session {id}"));
    };
    let mut session = session.lock().await;
    session.last_seen = Instant::now();

    let engine = state.engine.clone();
    let dialogue = session.dialogue.clone();
    let text = req.text.trim().to_string();
    let outcome = tokio::task::spawn_blocking(move || {
        let out = process_turn(&engine, &dialogue, &text, req.k);
        (engine, out)
    })
    .await;
    let (engine, out) = match outcome {
        Ok((engine, Ok(out))) => (engine, out),
        Ok((_, Err(e))) => return e.into_response(),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")),
    };

    let recs = recommendations(&engine, &out.trace);
    let reply = reply_text(&recs, engine.config.service.reply_items);
    session.dialogue.turns.push(out.user.clone());
    session.dialogue.turns.push(Utterance::new(Speaker::System, reply.clone()));
    session.last_seen = Instant::now();
    let trace = q.trace.then(|| trace_view(&engine, &out, &recs));
    session.last_trace = Some(out.trace);
    let resp = MessageResponse {
        api: API_VERSION,
        session_id: id,
        turn: session.dialogue.turns.len() - 2,
        reply,
        recommendations: recs,
        trace,
    };
    Json(resp).into_response()
}
