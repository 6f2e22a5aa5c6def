//! Per-query orchestration: collaborative retrieval, context reflection,
//! augmented generation and reflect-and-rerank, with ablation variants.

mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cf_model::{retrieve, rewrite_query, CfError, QueryVector, RetrievalList, SimilarityModel};
use crate::corpus::{CatalogId, Dialogue, ItemDatabase, ItemId, PositivityPolicy};
use crate::entity_link::{LinkError, TitleIndex};
use crate::llm_gateway::{Gateway, GatewayError};

pub use stages::{
    build_augmentation, context_reflect, generate_recommendations, link_generated, reflect_rerank,
    seed_items_cold_start, StageLog,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    /// No reflect-and-rerank.
    #[serde(rename = "nR2")]
    NR2,
    /// No reflection at all.
    #[serde(rename = "nR12")]
    NR12,
    /// Generation from the dialogue alone.
    #[serde(rename = "zero_shot")]
    ZeroShot,
}

impl Variant {
    pub const ABLATIONS: [Variant; 3] = [Variant::Full, Variant::NR2, Variant::NR12];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NR2 => "nR2",
            Variant::NR12 => "nR12",
            Variant::ZeroShot => "zero_shot",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Variant::Full, Variant::NR2, Variant::NR12, Variant::ZeroShot]
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant {s:?} (expected full, nR2, nR12 or zero_shot)"))
    }
}

/// How the retrieval block is framed for the generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    #[default]
    Rag,
    Rec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Collaborative retrieval size.
    pub k: usize,
    /// Recommendations requested from the LLM.
    pub m_rec: usize,
    pub prompt_mode: PromptMode,
    pub variant: Variant,
    pub cold_start_seeds: usize,
    /// Keep the query's own items in the retrieval.
    pub allow_mentioned: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 20,
            m_rec: 20,
            prompt_mode: PromptMode::Rag,
            variant: Variant::Full,
            cold_start_seeds: 5,
            allow_mentioned: false,
        }
    }
}

impl PipelineConfig {
    /// Retrieval size after the variant is taken into account.
    pub fn effective_k(&self) -> usize {
        if self.variant == Variant::ZeroShot {
            0
        } else {
            self.k
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.m_rec == 0 {
            return Err("m_rec must be at least 1".into());
        }
        Ok(())
    }
}

/// Everything one query produced, stage by stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub query_items: Vec<ItemId>,
    /// True when the query had no positively mentioned items.
    pub cold_start: bool,
    /// LLM-inferred items used as the query on the cold-start path.
    pub seed_items: Vec<ItemId>,
    pub raw_retrieval: RetrievalList,
    pub reflected_retrieval: Vec<CatalogId>,
    pub raw_recs: Vec<CatalogId>,
    pub rerank_scores: BTreeMap<CatalogId, i8>,
    pub final_recs: Vec<CatalogId>,
    pub llm_calls: usize,
    pub warnings: Vec<String>,
}

impl PipelineTrace {
    /// `final_recs` is a permutation of `raw_recs` and the reflected retrieval
    /// is an order-preserving subset of the raw retrieval.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut a = self.raw_recs.clone();
        let mut b = self.final_recs.clone();
        a.sort();
        b.sort();
        if a != b {
            return Err("final_recs is not a permutation of raw_recs".into());
        }
        let raw = self.raw_retrieval.ids();
        let mut pos = 0;
        for c in &self.reflected_retrieval {
            match raw[pos..].iter().position(|r| r == c) {
                Some(p) => pos += p + 1,
                None => return Err(format!("reflected item {} is not an ordered subset of the retrieval", c.0)),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Cf(#[from] CfError),
    #[error("no generated recommendation could be linked to the catalog")]
    EmptyRecommendation,
}

impl PipelineError {
    /// The underlying gateway error, if the failure came from the LLM backend.
    pub fn gateway(&self) -> Option<&GatewayError> {
        match self {
            PipelineError::Gateway(g) | PipelineError::Link(LinkError::Gateway(g)) => Some(g),
            _ => None,
        }
    }
}

/// Shared, read-only resources a run needs.
#[derive(Clone, Copy)]
pub struct PipelineInputs<'a> {
    pub model: &'a SimilarityModel,
    pub db: &'a ItemDatabase,
    pub index: &'a TitleIndex,
    pub policy: &'a PositivityPolicy,
    pub llm: &'a Gateway,
}

/// Runs one query through the configured variant.
pub fn run(prefix: &Dialogue, cfg: &PipelineConfig, inputs: &PipelineInputs<'_>) -> Result<PipelineTrace, PipelineError> {
    let PipelineInputs {
        model,
        db,
        index,
        policy,
        llm,
    } = *inputs;
    let mut log = StageLog::default();
    let mut trace = PipelineTrace::default();
    let k = cfg.effective_k();

    let mut query = rewrite_query(prefix, policy, db);
    trace.query_items = query.source_items().to_vec();
    trace.cold_start = query.is_empty();
    if trace.cold_start && k > 0 {
        trace.seed_items = seed_items_cold_start(prefix, cfg, index, llm, &mut log)?;
        query = QueryVector::new(db.len(), trace.seed_items.iter().copied())?;
    }

    trace.raw_retrieval = retrieve(model, &query, k, cfg.allow_mentioned)?;
    trace.reflected_retrieval = match cfg.variant {
        Variant::Full | Variant::NR2 => context_reflect(prefix, &trace.raw_retrieval, db, index, llm, &mut log)?,
        Variant::NR12 | Variant::ZeroShot => trace.raw_retrieval.ids(),
    };

    let augmentation = build_augmentation(&trace.reflected_retrieval, db);
    trace.raw_recs = generate_recommendations(prefix, &augmentation, cfg, db, index, llm, &mut log)?;

    if cfg.variant == Variant::Full {
        let (order, scores) = reflect_rerank(prefix, &trace.raw_recs, db, index, llm, &mut log)?;
        trace.final_recs = order;
        trace.rerank_scores = scores;
    } else {
        trace.final_recs = trace.raw_recs.clone();
    }
    trace.llm_calls = log.llm_calls;
    trace.warnings = log.warnings;
    Ok(trace)
}
