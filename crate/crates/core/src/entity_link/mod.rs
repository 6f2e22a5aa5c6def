//! LLM-based entity linking.
//!
//! Mentions are extracted by the LLM as `name####attitude` lines, matched
//! against the item database at character level (edit distance) and word
//! level (BM25), and only the candidates on which the two matchers disagree
//! are sent back to the LLM for adjudication.

mod index;
mod link;
mod normalize;
pub mod parse;

use thiserror::Error;

use crate::llm_gateway::GatewayError;

pub use index::{Match, MatcherConfig, TitleIndex};
pub use link::{extract_and_link, link_mentions, LinkMethod, LinkOutcome, LinkedMention, MatchCandidate};
pub use normalize::{normalize_title, tokenize};
pub use parse::{parse_extraction, MentionCandidate, Parsed};
pub(crate) use link::complete_parsed;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("malformed {what} completion: {malformed} of {total} lines unparseable")]
    MalformedCompletion {
        what: &'static str,
        malformed: usize,
        total: usize,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}
