//! Orchestration of the retrieve → rank → generate recipe.

mod config;
mod ingest;
mod session;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{PipelineConfig, DEFAULT_TOP_K, DEFAULT_TOP_N};
pub use ingest::{build_corpus_index, ingest_and_index, load_corpus, IngestReport};
pub use session::{Session, SessionStore};

use crate::generation::{build_prompt, generate_answer, GeneratedAnswer, GenerationError, Generator};
use crate::ranker::{rank_and_select, CrossScorer, RankError, RankedList};
use crate::retrieval::{EmbeddingProvider, IndexManifest, RetrievalError, RetrievalResult, ScoredClue, VectorIndex};
use crate::unirep::{build_contextual_question, ContextualQuestion, ConversationTurn, Modality, UnirepError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Contextualize(#[source] UnirepError),
    #[error("{0}")]
    Retrieve(#[source] RetrievalError),
    #[error("{0}")]
    Rank(#[source] RankError),
    #[error("{0}")]
    Generate(#[source] GenerationError),
    #[error("{0}")]
    Index(#[source] RetrievalError),
    #[error("{0}")]
    Ingest(String),
    #[error("duplicate record id {0:?}")]
    DuplicateRecord(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session store: {0}")]
    Session(String),
}

impl PipelineError {
    /// Name of the stage that failed, as reported in error bodies.
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Contextualize(_) => "contextualize",
            PipelineError::Retrieve(_) => "retrieve",
            PipelineError::Rank(_) => "rank",
            PipelineError::Generate(_) => "generate",
            PipelineError::Index(_) => "index",
            PipelineError::Ingest(_) | PipelineError::DuplicateRecord(_) => "ingest",
            PipelineError::UnknownSession(_) | PipelineError::Session(_) => "session",
        }
    }
}

/// Wall-clock time spent in each stage, in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub contextualize_us: u64,
    pub retrieve_us: u64,
    pub rank_us: u64,
    pub generate_us: u64,
    pub total_us: u64,
}

/// A selected clue as shown to the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceClue {
    pub clue_id: String,
    pub modality: Modality,
    pub score: f64,
    pub logit: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerEnvelope {
    pub answer: GeneratedAnswer,
    pub contextual_question: ContextualQuestion,
    /// Selected clues in rank order.
    pub clues: Vec<EvidenceClue>,
    pub ranked_clues: RankedList,
    pub retrieval: RetrievalResult,
    pub timings: StageTimings,
}

impl AnswerEnvelope {
    /// Envelope with timings zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        Self { timings: StageTimings::default(), ..self.clone() }
    }
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

/// A loaded index plus the providers configured to query it.
#[derive(Debug)]
pub struct Engine {
    config: PipelineConfig,
    index: Arc<VectorIndex>,
    manifest: IndexManifest,
    embedder: EmbeddingProvider,
    scorer: CrossScorer,
    generator: Generator,
}

impl Engine {
    /// Loads the index at `config.index_path`. Opens HTTP clients for remote
    /// providers, so call it outside any async runtime.
    pub fn open(config: PipelineConfig) -> Result<Self, PipelineError> {
        let path = config
            .index_path
            .clone()
            .ok_or_else(|| PipelineError::Config("index_path is not set".into()))?;
        let (index, manifest) = VectorIndex::load(&path).map_err(PipelineError::Index)?;
        Self::with_index(Arc::new(index), manifest, config)
    }

    pub fn with_index(
        index: Arc<VectorIndex>,
        manifest: IndexManifest,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let embedder = EmbeddingProvider::from_spec(&config.embedder).map_err(PipelineError::Retrieve)?;
        index.check_provider(&embedder).map_err(PipelineError::Index)?;
        let scorer = CrossScorer::from_spec(&config.scorer).map_err(PipelineError::Rank)?;
        let generator = Generator::from_spec(&config.generator).map_err(PipelineError::Generate)?;
        Ok(Self { config, index, manifest, embedder, scorer, generator })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn answer(&self, history: &[ConversationTurn], question: &str) -> Result<AnswerEnvelope, PipelineError> {
        self.answer_with_gold(history, question, &[])
    }

    /// Like [`Engine::answer`], but when `inject_gold` is enabled in the
    /// config any of `gold_ids` missing from the top-K replace its tail.
    pub fn answer_with_gold(
        &self,
        history: &[ConversationTurn],
        question: &str,
        gold_ids: &[String],
    ) -> Result<AnswerEnvelope, PipelineError> {
        let started = Instant::now();
        let mut timings = StageTimings::default();

        let t = Instant::now();
        let contextual = build_contextual_question(history, question, &self.config.textualization)
            .map_err(PipelineError::Contextualize)?;
        timings.contextualize_us = micros(t);

        let t = Instant::now();
        let retrieval = self.retrieve(&contextual, gold_ids)?;
        timings.retrieve_us = micros(t);

        let t = Instant::now();
        let candidates: Vec<_> = retrieval
            .ids()
            .map(|id| {
                self.index
                    .clue(id)
                    .ok_or_else(|| PipelineError::Retrieve(RetrievalError::UnknownClue(id.to_string())))
            })
            .collect::<Result<_, _>>()?;
        let ranked = rank_and_select(&contextual, &candidates, self.config.top_n, &self.scorer)
            .map_err(PipelineError::Rank)?;
        timings.rank_us = micros(t);

        let t = Instant::now();
        let prompt = build_prompt(&contextual, &ranked, &self.index).map_err(PipelineError::Generate)?;
        let answer = generate_answer(&prompt, &self.generator).map_err(PipelineError::Generate)?;
        timings.generate_us = micros(t);

        let clues = ranked
            .selected()
            .iter()
            .map(|r| EvidenceClue {
                clue_id: r.clue_id.clone(),
                modality: r.modality,
                score: r.score,
                logit: r.logit,
                text: self.index.clue(&r.clue_id).map(|c| c.text.clone()).unwrap_or_default(),
            })
            .collect();
        timings.total_us = micros(started);

        Ok(AnswerEnvelope {
            answer,
            contextual_question: contextual,
            clues,
            ranked_clues: ranked,
            retrieval,
            timings,
        })
    }

    fn retrieve(&self, question: &ContextualQuestion, gold_ids: &[String]) -> Result<RetrievalResult, PipelineError> {
        let k = self.config.top_k;
        if self.index.is_empty() {
            return Err(PipelineError::Retrieve(RetrievalError::MissingIndex("index has no clues".into())));
        }
        let query = self.embedder.embed(&question.text).map_err(PipelineError::Retrieve)?;
        let mut result = self.index.search(&query, k).map_err(PipelineError::Retrieve)?;
        if self.config.inject_gold {
            let missing: Vec<&String> = gold_ids
                .iter()
                .filter(|g| self.index.clue(g).is_some() && !result.ids().any(|id| id == g.as_str()))
                .collect();
            let mut keep = result.items.len().min(k.saturating_sub(missing.len()));
            // never evict a gold clue that was retrieved on its own
            while keep < result.items.len() && gold_ids.contains(&result.items[keep].clue_id) {
                keep += 1;
            }
            result.items.truncate(keep);
            for g in missing {
                let score = self.index.score(&query, g).unwrap_or_default();
                result.items.push(ScoredClue { clue_id: g.clone(), score });
            }
        }
        Ok(result)
    }
}

/// Answers within `session` and appends the new turn to it.
pub fn answer_question(
    session: &mut Session,
    question: &str,
    engine: &Engine,
) -> Result<AnswerEnvelope, PipelineError> {
    let envelope = engine.answer(&session.turns, question)?;
    session.turns.push(ConversationTurn {
        question: question.to_string(),
        answer: envelope.answer.text.clone(),
    });
    Ok(envelope)
}
