//! Cross-scoring of (question, clue) pairs, top-N selection and the ranking
//! objective.

use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::metrics::{f1_tokens, normalize_answer};
use crate::numerics::{all_finite, log_sum_exp, sigmoid};
use crate::remote::{JsonClient, DEFAULT_MAX_IN_FLIGHT};
use crate::retrieval::{RetrievalResult, VectorIndex};
use crate::unirep::{Clue, ContextualQuestion, Modality};
use crate::RemoteError;

/// Negatives per ranking-training example.
pub const MAX_RANKING_NEGATIVES: usize = 30;

#[derive(Debug, thiserror::Error)]
pub enum RankError {
    #[error("invalid scorer spec: {0}")]
    InvalidSpec(String),
    #[error("question or clue text is empty")]
    EmptyText,
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("N must be positive")]
    InvalidN,
    #[error("logits must be finite")]
    NonFinite,
    #[error("positive index set is empty")]
    NoPositives,
    #[error("positive index {index} out of range for {len} logits")]
    PositiveOutOfRange { index: usize, len: usize },
    #[error("unknown clue id {0:?}")]
    UnknownClue(String),
    #[error("scoring endpoint {endpoint} failed for pairs {clue_ids:?}: {source}")]
    Remote {
        endpoint: String,
        clue_ids: Vec<String>,
        #[source]
        source: RemoteError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    LocalLexical,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrossScorerSpec {
    pub kind: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl Default for CrossScorerSpec {
    fn default() -> Self {
        Self { kind: ScorerKind::LocalLexical, endpoint: None }
    }
}

impl CrossScorerSpec {
    pub fn remote(endpoint: impl Into<String>) -> Self {
        Self { kind: ScorerKind::Remote, endpoint: Some(endpoint.into()) }
    }

    pub fn validate(&self) -> Result<(), RankError> {
        if self.kind == ScorerKind::Remote && self.endpoint.as_deref().map_or(true, str::is_empty) {
            return Err(RankError::InvalidSpec("remote scorer requires an endpoint".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScore {
    pub clue_id: String,
    pub modality: Modality,
    pub logit: f64,
    /// `sigmoid(logit)`
    pub score: f64,
}

impl RankScore {
    pub fn new(clue: &Clue, logit: f64) -> Self {
        Self {
            clue_id: clue.id.clone(),
            modality: clue.modality,
            logit,
            score: sigmoid(logit),
        }
    }
}

/// Candidates sorted by score (ties by id); the first `n` are selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub n: usize,
    pub items: Vec<RankScore>,
}

impl RankedList {
    pub fn new(mut items: Vec<RankScore>, n: usize) -> Self {
        // Sorting by logit keeps the order exact where sigmoid saturates.
        items.sort_by(|a, b| b.logit.total_cmp(&a.logit).then_with(|| a.clue_id.cmp(&b.clue_id)));
        Self { n, items }
    }

    pub fn selected(&self) -> &[RankScore] {
        &self.items[..self.n.min(self.items.len())]
    }

    pub fn top(&self) -> Option<&RankScore> {
        self.items.first()
    }
}

#[derive(Serialize)]
struct ScorePair<'a> {
    question: &'a str,
    clue: &'a str,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: Vec<ScorePair<'a>>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    logits: Vec<f64>,
}

#[derive(Debug)]
pub struct CrossScorer {
    spec: CrossScorerSpec,
    client: Option<JsonClient>,
}

/// `4·F1 − 2` over normalized tokens: logits in `[-2, 2]`.
pub fn lexical_logit(question: &str, clue: &str) -> f64 {
    4.0 * f1_tokens(&normalize_answer(question), &normalize_answer(clue)) - 2.0
}

impl CrossScorer {
    /// Remote scorers open an HTTP client; do not call from async code.
    pub fn from_spec(spec: &CrossScorerSpec) -> Result<Self, RankError> {
        spec.validate()?;
        let client = match spec.kind {
            ScorerKind::LocalLexical => None,
            ScorerKind::Remote => Some(JsonClient::new(
                spec.endpoint.as_deref().unwrap_or_default(),
                DEFAULT_MAX_IN_FLIGHT,
            )),
        };
        Ok(Self { spec: spec.clone(), client })
    }

    pub fn spec(&self) -> &CrossScorerSpec {
        &self.spec
    }

    /// One logit per clue, in input order.
    pub fn logits(&self, question: &str, clues: &[&Clue]) -> Result<Vec<f64>, RankError> {
        if question.trim().is_empty() || clues.iter().any(|c| c.text.trim().is_empty()) {
            return Err(RankError::EmptyText);
        }
        let Some(client) = &self.client else {
            return Ok(clues.par_iter().map(|c| lexical_logit(question, &c.text)).collect());
        };
        let remote = |source| RankError::Remote {
            endpoint: client.endpoint().to_string(),
            clue_ids: clues.iter().map(|c| c.id.clone()).collect(),
            source,
        };
        let request = ScoreRequest {
            pairs: clues.iter().map(|c| ScorePair { question, clue: &c.text }).collect(),
        };
        let response: ScoreResponse = client.post("score", &request).map_err(remote)?;
        if response.logits.len() != clues.len() {
            return Err(remote(client.shape_error(
                "score",
                format!("expected {} logits, got {}", clues.len(), response.logits.len()),
            )));
        }
        if !all_finite(&response.logits) {
            return Err(remote(client.shape_error("score", "non-finite logit")));
        }
        Ok(response.logits)
    }
}

pub fn score_pair(question: &ContextualQuestion, clue: &Clue, scorer: &CrossScorer) -> Result<RankScore, RankError> {
    let logits = scorer.logits(&question.text, &[clue])?;
    Ok(RankScore::new(clue, logits[0]))
}

pub fn rank_and_select(
    question: &ContextualQuestion,
    candidates: &[&Clue],
    n: usize,
    scorer: &CrossScorer,
) -> Result<RankedList, RankError> {
    if candidates.is_empty() {
        return Err(RankError::NoCandidates);
    }
    if n == 0 {
        return Err(RankError::InvalidN);
    }
    let logits = scorer.logits(&question.text, candidates)?;
    let items = candidates.iter().zip(logits).map(|(c, l)| RankScore::new(c, l)).collect();
    Ok(RankedList::new(items, n))
}

/// `−Σ_{i∈Pos} ln softmax(logits)_i` on raw (pre-sigmoid) logits.
pub fn ranking_loss(logits: &[f64], positive_indices: &BTreeSet<usize>) -> Result<f64, RankError> {
    if positive_indices.is_empty() {
        return Err(RankError::NoPositives);
    }
    if !all_finite(logits) {
        return Err(RankError::NonFinite);
    }
    if let Some(&index) = positive_indices.iter().find(|&&i| i >= logits.len()) {
        return Err(RankError::PositiveOutOfRange { index, len: logits.len() });
    }
    let lse = log_sum_exp(logits);
    Ok(positive_indices.iter().map(|&i| lse - logits[i]).sum::<f64>().max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingBatch {
    pub candidates: Vec<Clue>,
    pub positive_indices: BTreeSet<usize>,
}

/// Gold clues (sorted by id) followed by up to [`MAX_RANKING_NEGATIVES`]
/// non-gold clues in retrieval order.
pub fn build_ranking_batch(
    retrieved: &RetrievalResult,
    gold_ids: &[String],
    index: &VectorIndex,
) -> Result<RankingBatch, RankError> {
    let gold: BTreeSet<&str> = gold_ids.iter().map(String::as_str).collect();
    let mut candidates = Vec::with_capacity(gold.len() + MAX_RANKING_NEGATIVES);
    for id in &gold {
        let clue = index.clue(id).ok_or_else(|| RankError::UnknownClue(id.to_string()))?;
        candidates.push(clue.clone());
    }
    let positive_indices = (0..candidates.len()).collect();
    let mut seen: HashSet<&str> = HashSet::new();
    for id in retrieved.ids() {
        if candidates.len() - gold.len() == MAX_RANKING_NEGATIVES {
            break;
        }
        if gold.contains(id) || !seen.insert(id) {
            continue;
        }
        let clue = index.clue(id).ok_or_else(|| RankError::UnknownClue(id.to_string()))?;
        candidates.push(clue.clone());
    }
    Ok(RankingBatch { candidates, positive_indices })
}
