//! Uniform LLM access: prompt rendering, live/record/replay backends and a
//! bound on in-flight live requests.
//!
//! Exchanges are keyed by `(template id, SHA-256 of the serialized request)`
//! rather than by call order, so replay is unaffected by how evaluation work
//! is scheduled across threads.

mod limit;
mod live;
pub mod prompts;
mod transcript;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use limit::Limited;
pub use live::{LiveBackend, RetryPolicy};
pub use prompts::{render, render_dialogue, RenderedPrompt, Slots, TemplateId};
pub use transcript::{ExchangeRecord, RecordingBackend, ReplayBackend, Transcript};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// A fully rendered request. Its serialized form is the replay key material.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub template: TemplateId,
    pub model: String,
    pub temperature: f32,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    /// Lowercase hex SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
    pub latency_ms: u64,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: None,
            latency_ms: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template}: missing slot {slot:?}")]
    MissingSlot { template: TemplateId, slot: String },
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("replay miss for ({template}, {hash})")]
    ReplayMiss { template: TemplateId, hash: String },
    #[error("transcript {path}: {message}")]
    Transcript { path: PathBuf, message: String },
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Other(String),
}

/// A chat-completion provider.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError>;

    /// Whether calls reach a network endpoint (and so count against limits).
    fn is_live(&self) -> bool {
        false
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        (**self).complete(request)
    }

    fn is_live(&self) -> bool {
        (**self).is_live()
    }
}

/// Backend driven by a closure; used for scripted responders and tests.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        (self.0)(request).map(Completion::text)
    }
}

/// Renders templates and sends them through a backend.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    model: String,
    temperature: f32,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, model: impl Into<String>) -> Self {
        Self {
            backend,
            model: model.into(),
            temperature: 0.0,
        }
    }

    pub fn from_fn<F>(model: impl Into<String>, f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    {
        Self::new(Arc::new(FnBackend(f)), model)
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn backend(&self) -> &Arc<dyn ChatBackend> {
        &self.backend
    }

    pub fn request(&self, template: TemplateId, slots: &Slots) -> Result<ChatRequest, GatewayError> {
        let rendered = render(template, slots)?;
        Ok(ChatRequest {
            template,
            model: self.model.clone(),
            temperature: self.temperature,
            messages: rendered.messages,
        })
    }

    pub fn complete(&self, template: TemplateId, slots: &Slots) -> Result<String, GatewayError> {
        let request = self.request(template, slots)?;
        self.backend.complete(&request).map(|c| c.text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Record,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub backend: BackendKind,
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub transcript: Option<PathBuf>,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Replay,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            transcript: None,
            max_in_flight: 8,
            max_attempts: 5,
            base_backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

/// Builds the configured backend. The in-flight limit wraps live traffic only.
pub fn build_gateway(cfg: &BackendConfig) -> Result<Gateway, GatewayError> {
    let transcript_path = || {
        cfg.transcript
            .clone()
            .ok_or_else(|| GatewayError::Config(format!("{:?} backend needs a transcript path", cfg.backend)))
    };
    let live = || -> Result<Arc<dyn ChatBackend>, GatewayError> {
        let key = std::env::var(&cfg.api_key_env).ok();
        let backend = LiveBackend::new(
            cfg.endpoint.clone(),
            key,
            RetryPolicy {
                max_attempts: cfg.max_attempts,
                base_backoff_ms: cfg.base_backoff_ms,
                ..RetryPolicy::default()
            },
            std::time::Duration::from_secs(cfg.timeout_secs),
        )?;
        Ok(Arc::new(Limited::new(backend, cfg.max_in_flight)?))
    };
    let backend: Arc<dyn ChatBackend> = match cfg.backend {
        BackendKind::Live => live()?,
        BackendKind::Record => Arc::new(RecordingBackend::open(live()?, &transcript_path()?)?),
        BackendKind::Replay => Arc::new(ReplayBackend::new(Transcript::load(&transcript_path()?)?)),
    };
    Ok(Gateway::new(backend, cfg.model.clone()))
}
