//! Fusing the selected clues into one prompt and producing an answer.

use serde::{Deserialize, Serialize};

use crate::eval::metrics::{f1_tokens, normalize_answer};
use crate::numerics::all_finite;
use crate::ranker::RankedList;
use crate::remote::JsonClient;
use crate::retrieval::VectorIndex;
use crate::unirep::{ContextualQuestion, Modality};
use crate::RemoteError;

pub const DEFAULT_MAX_ANSWER_TOKENS: usize = 64;
pub const DEFAULT_MAX_IN_FLIGHT: usize = crate::remote::DEFAULT_MAX_IN_FLIGHT;

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("no clues selected for the prompt")]
    NoClues,
    #[error("clue {0:?} is not in the clue store")]
    MissingClue(String),
    #[error("prompt contexts contain no sentences")]
    NoSentences,
    #[error("generator returned an empty answer")]
    EmptyAnswer,
    #[error("generation endpoint {endpoint}: {source}")]
    Remote {
        endpoint: String,
        #[source]
        source: RemoteError,
    },
    #[error("log-probabilities must be finite and non-positive")]
    InvalidLogProb,
    #[error("no gold-token log-probabilities")]
    EmptySequence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBlock {
    pub clue_id: String,
    pub modality: Modality,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub clue_ids: Vec<String>,
    pub question_text: String,
    pub blocks: Vec<PromptBlock>,
}

/// `question: <q>` followed by one `context [<modality>] (<id>): <text>` line
/// per selected clue, in rank order.
pub fn build_prompt(
    question: &ContextualQuestion,
    ranked: &RankedList,
    store: &VectorIndex,
) -> Result<Prompt, GenerationError> {
    let selected = ranked.selected();
    if selected.is_empty() {
        return Err(GenerationError::NoClues);
    }
    let mut text = format!("question: {}", question.text);
    let mut blocks = Vec::with_capacity(selected.len());
    for item in selected {
        let clue = store
            .clue(&item.clue_id)
            .ok_or_else(|| GenerationError::MissingClue(item.clue_id.clone()))?;
        text.push_str(&format!("\ncontext [{}] ({}): {}", clue.modality, clue.id, clue.text));
        blocks.push(PromptBlock {
            clue_id: clue.id.clone(),
            modality: clue.modality,
            text: clue.text.clone(),
        });
    }
    Ok(Prompt {
        text,
        clue_ids: blocks.iter().map(|b| b.clue_id.clone()).collect(),
        question_text: question.text.clone(),
        blocks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Extractive,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeneratorProviderSpec {
    pub kind: GeneratorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_max_answer_tokens")]
    pub max_answer_tokens: usize,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_max_answer_tokens() -> usize {
    DEFAULT_MAX_ANSWER_TOKENS
}

fn default_max_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

impl Default for GeneratorProviderSpec {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::Extractive,
            endpoint: None,
            max_answer_tokens: DEFAULT_MAX_ANSWER_TOKENS,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

impl GeneratorProviderSpec {
    pub fn remote(endpoint: impl Into<String>) -> Self {
        Self { kind: GeneratorKind::Remote, endpoint: Some(endpoint.into()), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.max_answer_tokens == 0 {
            return Err(GenerationError::InvalidSpec("max_answer_tokens must be positive".into()));
        }
        if self.kind == GeneratorKind::Remote && self.endpoint.as_deref().map_or(true, str::is_empty) {
            return Err(GenerationError::InvalidSpec("remote generator requires an endpoint".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedAnswer {
    pub text: String,
    pub provenance: Vec<String>,
    pub generator_kind: GeneratorKind,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

#[derive(Debug)]
pub struct Generator {
    spec: GeneratorProviderSpec,
    client: Option<JsonClient>,
}

impl Generator {
    /// Remote generators open an HTTP client; do not call from async code.
    pub fn from_spec(spec: &GeneratorProviderSpec) -> Result<Self, GenerationError> {
        spec.validate()?;
        let client = match spec.kind {
            GeneratorKind::Extractive => None,
            GeneratorKind::Remote => Some(JsonClient::new(
                spec.endpoint.as_deref().unwrap_or_default(),
                spec.max_in_flight,
            )),
        };
        Ok(Self { spec: spec.clone(), client })
    }

    pub fn spec(&self) -> &GeneratorProviderSpec {
        &self.spec
    }
}

/// Splits after each `.`, `?` or `!`; pieces without any alphanumeric
/// character are dropped.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if matches!(c, '.' | '?' | '!') {
            out.push(&text[start..i + c.len_utf8()]);
            start = i + c.len_utf8();
        }
    }
    out.push(&text[start..]);
    out.into_iter()
        .map(str::trim)
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .collect()
}

pub fn generate_answer(prompt: &Prompt, generator: &Generator) -> Result<GeneratedAnswer, GenerationError> {
    match &generator.client {
        None => extractive_answer(prompt),
        Some(client) => {
            let remote = |source| GenerationError::Remote { endpoint: client.endpoint().to_string(), source };
            let max_tokens = generator.spec.max_answer_tokens;
            let response: GenerateResponse = client
                .post("generate", &GenerateRequest { prompt: &prompt.text, max_tokens })
                .map_err(remote)?;
            let text = truncate_tokens(response.text.trim(), max_tokens);
            if text.is_empty() {
                return Err(GenerationError::EmptyAnswer);
            }
            Ok(GeneratedAnswer {
                text,
                provenance: prompt.clue_ids.clone(),
                generator_kind: GeneratorKind::Remote,
            })
        }
    }
}

fn truncate_tokens(text: &str, max: usize) -> String {
    if text.split_whitespace().nth(max).is_none() {
        text.to_string()
    } else {
        text.split_whitespace().take(max).collect::<Vec<_>>().join(" ")
    }
}

/// Picks the context sentence with the highest token F1 against the
/// question. Earlier blocks, then earlier sentences, win ties.
fn extractive_answer(prompt: &Prompt) -> Result<GeneratedAnswer, GenerationError> {
    let question = normalize_answer(&prompt.question_text);
    let mut best: Option<(f64, usize, &str)> = None;
    for (b, block) in prompt.blocks.iter().enumerate() {
        for sentence in split_sentences(&block.text) {
            let f1 = f1_tokens(&normalize_answer(sentence), &question);
            if best.map_or(true, |(top, _, _)| f1 > top) {
                best = Some((f1, b, sentence));
            }
        }
    }
    let (_, winner, sentence) = best.ok_or(GenerationError::NoSentences)?;
    let mut provenance = vec![prompt.blocks[winner].clue_id.clone()];
    provenance.extend(
        prompt
            .blocks
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != winner)
            .map(|(_, b)| b.clue_id.clone()),
    );
    Ok(GeneratedAnswer {
        text: sentence.to_string(),
        provenance,
        generator_kind: GeneratorKind::Extractive,
    })
}

/// Negated sum of gold-token log-probabilities.
pub fn generation_loss(stepwise_gold_logprobs: &[f64]) -> Result<f64, GenerationError> {
    if stepwise_gold_logprobs.is_empty() {
        return Err(GenerationError::EmptySequence);
    }
    if !all_finite(stepwise_gold_logprobs) || stepwise_gold_logprobs.iter().any(|&l| l > 0.0) {
        return Err(GenerationError::InvalidLogProb);
    }
    Ok(-stepwise_gold_logprobs.iter().sum::<f64>())
}
