//! Answer- and evidence-level metrics with SQuAD-style normalization.

use std::collections::{HashMap, HashSet};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, drop punctuation, drop articles, split on whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let stripped: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    stripped
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .map(str::to_string)
        .collect()
}

pub fn exact_match<S: AsRef<str>>(pred: &str, golds: &[S]) -> f64 {
    let p = normalize_answer(pred);
    if golds.iter().any(|g| normalize_answer(g.as_ref()) == p) {
        1.0
    } else {
        0.0
    }
}

/// Bag-of-tokens F1 between two token lists.
pub fn f1_tokens(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Maximum word-level F1 over the gold answers.
pub fn token_f1<S: AsRef<str>>(pred: &str, golds: &[S]) -> f64 {
    let p = normalize_answer(pred);
    golds
        .iter()
        .map(|g| f1_tokens(&p, &normalize_answer(g.as_ref())))
        .fold(0.0, f64::max)
}

/// Set F1 between predicted and gold evidence ids.
pub fn retrieval_f1<S: AsRef<str>>(pred_ids: &[S], gold_ids: &[S]) -> f64 {
    let pred: HashSet<&str> = pred_ids.iter().map(AsRef::as_ref).collect();
    let gold: HashSet<&str> = gold_ids.iter().map(AsRef::as_ref).collect();
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let hit = pred.intersection(&gold).count() as f64;
    if hit == 0.0 {
        return 0.0;
    }
    let precision = hit / pred.len() as f64;
    let recall = hit / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// 1 when every keyword's normalized tokens occur contiguously in the
/// normalized prediction.
pub fn keyword_accuracy<S: AsRef<str>>(pred: &str, keywords: &[S]) -> f64 {
    let p = normalize_answer(pred);
    let all = keywords.iter().all(|k| {
        let k = normalize_answer(k.as_ref());
        k.is_empty() || p.windows(k.len()).any(|w| w == k.as_slice())
    });
    if all {
        1.0
    } else {
        0.0
    }
}
