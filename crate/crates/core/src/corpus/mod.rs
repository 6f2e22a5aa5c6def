//! Dialogues, the item database, the recommendable catalog, the pseudo-user
//! interaction matrix and evaluation records.
//!
//! Everything in this module is immutable once built. Entity linking produces
//! annotated copies of dialogues instead of mutating them.

mod database;
mod ingest;
mod interactions;
mod records;

use std::fmt;
use std::path::PathBuf;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use database::{build_item_database, parse_title_year, ItemDatabase, ItemMetadata, ItemRecord};
pub use ingest::{
    assign_splits_by_month, ingest_dialogues, parse_dialogues, read_metadata, write_dialogues,
    DatasetFormat, IngestOptions,
};
pub use interactions::{build_interactions, InteractionMatrix};
pub use records::{dataset_stats, make_eval_records, DatasetStats, EvalRecord};

/// Index into the item database.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

/// Index into the recommendable catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CatalogId(pub u32);

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl CatalogId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "item#{}", self.0)
    }
}

impl fmt::Display for CatalogId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "catalog#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::User => "USER",
            Speaker::System => "SYSTEM",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        match tag {
            "USER" => Some(Speaker::User),
            "SYSTEM" => Some(Speaker::System),
            _ => None,
        }
    }
}

/// A linked item mention: canonical database title plus the attitude in -2..=2.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub item: String,
    pub attitude: i8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mentions: Vec<Mention>,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Self {
            speaker,
            text: text.into(),
            mentions: Vec::new(),
        }
    }

    pub fn with_mentions(mut self, mentions: Vec<Mention>) -> Self {
        self.mentions = mentions;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub date: NaiveDate,
    pub split: Split,
    pub turns: Vec<Utterance>,
}

impl Dialogue {
    /// The first `k` turns, i.e. the context available before turn `k`.
    pub fn prefix(&self, k: usize) -> Dialogue {
        Dialogue {
            id: self.id.clone(),
            date: self.date,
            split: self.split,
            turns: self.turns[..k.min(self.turns.len())].to_vec(),
        }
    }

    pub fn has_mentions(&self) -> bool {
        self.turns.iter().any(|t| !t.mentions.is_empty())
    }

    pub fn mentions(&self) -> impl Iterator<Item = (Speaker, &Mention)> {
        self.turns
            .iter()
            .flat_map(|t| t.mentions.iter().map(move |m| (t.speaker, m)))
    }
}

/// Attitude thresholds deciding which mentions count as positive interactions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositivityPolicy {
    /// User mentions are positive iff attitude >= this value.
    pub user_min: i8,
    /// System mentions are positive iff attitude >= this value.
    pub system_min: i8,
}

impl Default for PositivityPolicy {
    fn default() -> Self {
        // Bare-title system recommendations get attitude 0 and still count.
        Self {
            user_min: 1,
            system_min: 0,
        }
    }
}

impl PositivityPolicy {
    pub fn is_positive(&self, speaker: Speaker, attitude: i8) -> bool {
        match speaker {
            Speaker::User => attitude >= self.user_min,
            Speaker::System => attitude >= self.system_min,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown speaker tag {tag:?}")]
    UnknownSpeaker { line: usize, tag: String },
    #[error("line {line}: invalid record: {reason}")]
    InvalidRecord { line: usize, reason: String },
    #[error("dialogue {dialogue}: mention references unknown item {item:?}")]
    UnknownItem { dialogue: String, item: String },
    #[error("interaction matrix file: {0}")]
    MatrixFormat(String),
}
