//! Dense retrieval: embedding providers, the exact top-K index, BM25 hard
//! negatives and the contrastive retrieval objective.

mod bm25;
mod embed;
mod index;

pub use bm25::{bm25_score, mine_hard_negative, Bm25Params, CorpusStats};
pub use embed::{
    fnv1a64, hash_embed, tokenize, EmbedderKind, EmbeddingProvider, EmbeddingProviderSpec, EmbeddingVector,
    DEFAULT_DIMENSION,
};
pub use index::{
    build_index, retrieve_topk, IndexManifest, RetrievalResult, ScoredClue, VectorIndex, CLUES_FILE, MANIFEST_FILE,
    VECTORS_FILE,
};

use crate::numerics::{all_finite, log_sum_exp};
use crate::RemoteError;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("invalid embedder spec: {0}")]
    InvalidSpec(String),
    #[error("text to embed is empty")]
    EmptyText,
    #[error("text has no tokens to embed: {0:?}")]
    NoTokens(String),
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector has non-finite components")]
    NonFiniteVector,
    #[error("duplicate clue id {0:?}")]
    DuplicateId(String),
    #[error("unknown clue id {0:?}")]
    UnknownClue(String),
    #[error("K must be positive")]
    InvalidK,
    #[error("index built with {index}, provider is {provider}")]
    ProviderMismatch { index: String, provider: String },
    #[error("query dimension {found} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no eligible negative clue")]
    NoNegative,
    #[error("similarities must be finite")]
    NonFinite,
    #[error("embedding endpoint {endpoint}: {source}")]
    Remote {
        endpoint: String,
        #[source]
        source: RemoteError,
    },
    #[error("no index at {0}")]
    MissingIndex(String),
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Negative log-likelihood of the positive under a softmax over raw
/// similarities (no temperature).
pub fn contrastive_retrieval_loss(sim_pos: f64, sim_negs: &[f64]) -> Result<f64, RetrievalError> {
    if !sim_pos.is_finite() || !all_finite(sim_negs) {
        return Err(RetrievalError::NonFinite);
    }
    let mut all = Vec::with_capacity(sim_negs.len() + 1);
    all.push(sim_pos);
    all.extend_from_slice(sim_negs);
    Ok((log_sum_exp(&all) - sim_pos).max(0.0))
}
