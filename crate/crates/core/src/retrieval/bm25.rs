//! Okapi BM25 over the clue corpus, used to mine hard negatives.

use std::collections::{HashMap, HashSet};

use super::embed::tokenize;
use super::index::rank_order;
use super::RetrievalError;
use crate::unirep::Clue;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusStats {
    doc_ids: Vec<String>,
    doc_lens: Vec<usize>,
    term_freqs: Vec<HashMap<String, u32>>,
    doc_freq: HashMap<String, usize>,
    avgdl: f64,
    positions: HashMap<String, usize>,
    params: Bm25Params,
}

impl CorpusStats {
    /// Documents are `(id, token list)` pairs.
    pub fn new<I>(docs: I) -> Self
    where
        I: IntoIterator<Item = (String, Vec<String>)>,
    {
        let mut stats = CorpusStats {
            doc_ids: Vec::new(),
            doc_lens: Vec::new(),
            term_freqs: Vec::new(),
            doc_freq: HashMap::new(),
            avgdl: 0.0,
            positions: HashMap::new(),
            params: Bm25Params::default(),
        };
        for (id, tokens) in docs {
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for term in tf.keys() {
                *stats.doc_freq.entry(term.clone()).or_default() += 1;
            }
            stats.positions.insert(id.clone(), stats.doc_ids.len());
            stats.doc_ids.push(id);
            stats.doc_lens.push(tokens.len());
            stats.term_freqs.push(tf);
        }
        if !stats.doc_ids.is_empty() {
            stats.avgdl = stats.doc_lens.iter().sum::<usize>() as f64 / stats.doc_ids.len() as f64;
        }
        stats
    }

    pub fn from_clues(clues: &[Clue]) -> Self {
        Self::new(clues.iter().map(|c| (c.id.clone(), tokenize(&c.text))))
    }

    pub fn with_params(mut self, params: Bm25Params) -> Self {
        self.params = params;
        self
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<usize> {
        self.positions.get(doc_id).map(|&i| self.doc_lens[i])
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn score_at(&self, query_tokens: &[String], i: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf_map = &self.term_freqs[i];
        let len = self.doc_lens[i] as f64;
        query_tokens
            .iter()
            .map(|term| {
                let tf = f64::from(tf_map.get(term).copied().unwrap_or(0));
                if tf == 0.0 {
                    return 0.0;
                }
                self.idf(term) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / self.avgdl))
            })
            .sum()
    }

    /// Every document scored against the query, best first, ties by id.
    pub fn rank_all(&self, query_tokens: &[String]) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = (0..self.doc_count())
            .map(|i| (self.doc_ids[i].clone(), self.score_at(query_tokens, i)))
            .collect();
        out.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        out
    }
}

/// Sum over query tokens (repeats included) of `idf · tf·(k1+1) / (tf + k1·(1−b+b·len/avgdl))`.
pub fn bm25_score(query_tokens: &[String], doc_id: &str, stats: &CorpusStats) -> Result<f64, RetrievalError> {
    let &i = stats
        .positions
        .get(doc_id)
        .ok_or_else(|| RetrievalError::UnknownClue(doc_id.to_string()))?;
    Ok(stats.score_at(query_tokens, i))
}

/// Highest-BM25 clue for `question` that is neither the positive nor one of
/// `other_gold`. Ties resolve to the smallest id.
pub fn mine_hard_negative(
    positive_id: &str,
    question: &str,
    stats: &CorpusStats,
    other_gold: &[String],
) -> Result<String, RetrievalError> {
    if !stats.positions.contains_key(positive_id) {
        return Err(RetrievalError::UnknownClue(positive_id.to_string()));
    }
    let excluded: HashSet<&str> = other_gold
        .iter()
        .map(String::as_str)
        .chain(std::iter::once(positive_id))
        .collect();
    let query = tokenize(question);
    stats
        .rank_all(&query)
        .into_iter()
        .find(|(id, _)| !excluded.contains(id.as_str()))
        .map(|(id, _)| id)
        .ok_or(RetrievalError::NoNegative)
}
