use thiserror::Error;

use crate::cf_model::CfError;
use crate::corpus::CorpusError;
use crate::entity_link::LinkError;
use crate::eval::EvalError;
use crate::llm_gateway::GatewayError;
use crate::pipeline::PipelineError;

/// Umbrella error for application-level entry points (CLI, service, FFI).
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Cf(#[from] CfError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
