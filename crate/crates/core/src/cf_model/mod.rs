//! Collaborative retrieval with an item-to-catalog EASE model.
//!
//! `W` maps every database item to every recommendable catalog item. The
//! only structural constraint is that a catalog item may not explain itself.

mod ease;
mod popularity;
mod retrieval;

use thiserror::Error;

pub use ease::{fit_ease, fit_ease_catalog, gram, SimilarityModel};
pub use popularity::{compute_pop_weights, DateWindow};
pub use retrieval::{retrieve, rewrite_query, score, top_k, QueryVector, RetrievalList, Retrieved};

#[derive(Debug, Error)]
pub enum CfError {
    #[error("lambda must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("Gram matrix is not positive definite")]
    Singular,
    #[error("popularity weights must be positive and finite")]
    InvalidPopularity,
    #[error("model file: {0}")]
    ModelFormat(String),
}
