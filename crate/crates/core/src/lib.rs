//! CRAG: conversational recommendation by collaborative retrieval augmented
//! LLM generation.
//!
//! Layout: [`corpus`] (data model and ingestion), [`entity_link`] (LLM
//! extraction and bi-level matching), [`cf_model`] (constrained EASE),
//! [`pipeline`] (per-query orchestration), [`llm_gateway`] (prompts and
//! backends), [`eval`] (offline protocol), [`app`] and [`service`] (wiring).

pub mod app;
pub mod cf_model;
pub mod corpus;
pub mod entity_link;
mod error;
pub mod eval;
pub mod llm_gateway;
pub mod pipeline;
pub mod service;

pub use error::{Error, Result};
