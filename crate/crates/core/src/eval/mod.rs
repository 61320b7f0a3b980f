//! Dataset loading, the evaluation runner and the textualization ablation.

pub mod metrics;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pipeline::{build_corpus_index, Engine, PipelineConfig, PipelineError};
use crate::retrieval::{EmbeddingProvider, IndexManifest};
use crate::unirep::{ConversationTurn, SourceDoc, TextualizationConfig};
use metrics::{exact_match, keyword_accuracy, retrieval_f1, token_f1};

pub const REPORT_FILE: &str = "report.json";
pub const PER_EXAMPLE_FILE: &str = "per_example.csv";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("duplicate qid {0:?}")]
    DuplicateQid(String),
    #[error(
        "index was built with use_global={index_global}, use_local={index_local} \
         but the run asks for use_global={global}, use_local={local}"
    )]
    AblationMismatch { index_global: bool, index_local: bool, global: bool, local: bool },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub qid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversation_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<u32>,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    #[serde(default)]
    pub gold_clue_ids: Vec<String>,
    #[serde(rename = "keywords", default, skip_serializing_if = "Option::is_none")]
    pub gold_keywords: Option<Vec<String>>,
}

impl QAExample {
    pub fn validate(&self) -> Result<(), String> {
        if self.qid.is_empty() {
            return Err("empty qid".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if self.gold_answers.is_empty() {
            return Err("no gold answers".into());
        }
        if self.conversation_id.is_some() && self.turn.is_none() {
            return Err("conversation_id without turn".into());
        }
        Ok(())
    }
}

pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<QAExample>, EvalError> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| EvalError::Dataset { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: QAExample = serde_json::from_str(&line)
            .map_err(|e| EvalError::Dataset { line: line_no, message: e.to_string() })?;
        ex.validate().map_err(|message| EvalError::Dataset { line: line_no, message })?;
        if !seen.insert(ex.qid.clone()) {
            return Err(EvalError::DuplicateQid(ex.qid));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<QAExample>, EvalError> {
    let file = File::open(path).map_err(io_err(path))?;
    parse_dataset(BufReader::new(file))
}

/// One evaluated example. Optional metrics are absent when undefined
/// (no gold clues, no keywords).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRow {
    pub qid: String,
    pub em: f64,
    pub f1: f64,
    pub retrieval_f1: Option<f64>,
    pub keyword_acc: Option<f64>,
    pub recall_at_k: Option<f64>,
    pub gold_in_top_n: Option<f64>,
    pub top_clue_id: Option<String>,
    pub answer: String,
    pub warning: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_fingerprint: String,
    pub config: RunSettings,
    pub example_count: usize,
    pub failed_count: usize,
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub retrieval_f1: Option<f64>,
    pub keyword_acc: Option<f64>,
    pub recall_at_k: Option<f64>,
    pub gold_in_top_n: Option<f64>,
    pub per_example: Vec<ExampleRow>,
}

/// The settings that determine a run's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub top_k: usize,
    pub top_n: usize,
    pub embedder: crate::retrieval::EmbeddingProviderSpec,
    pub scorer: crate::ranker::CrossScorerSpec,
    pub generator: crate::generation::GeneratorProviderSpec,
    pub textualization: TextualizationConfig,
    pub inject_gold: bool,
}

impl RunSettings {
    pub fn from_config(config: &PipelineConfig) -> Self {
        Self {
            top_k: config.top_k,
            top_n: config.top_n,
            embedder: config.embedder.clone(),
            scorer: config.scorer.clone(),
            generator: config.generator.clone(),
            textualization: config.textualization,
            inject_gold: config.inject_gold,
        }
    }

    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("settings serialize");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricsReport {
    pub fn from_rows(settings: RunSettings, mut rows: Vec<ExampleRow>) -> Self {
        rows.sort_by(|a, b| a.qid.cmp(&b.qid));
        Self {
            config_fingerprint: settings.fingerprint(),
            config: settings,
            example_count: rows.len(),
            failed_count: rows.iter().filter(|r| r.error.is_some()).count(),
            em: mean(rows.iter().map(|r| r.em)),
            f1: mean(rows.iter().map(|r| r.f1)),
            retrieval_f1: mean(rows.iter().filter_map(|r| r.retrieval_f1)),
            keyword_acc: mean(rows.iter().filter_map(|r| r.keyword_acc)),
            recall_at_k: mean(rows.iter().filter_map(|r| r.recall_at_k)),
            gold_in_top_n: mean(rows.iter().filter_map(|r| r.gold_in_top_n)),
            per_example: rows,
        }
    }

    /// Writes `report.json` and `per_example.csv` under `<out>/<fingerprint>/`
    /// and returns that directory.
    pub fn write(&self, out: &Path) -> Result<PathBuf, EvalError> {
        let dir = out.join(&self.config_fingerprint);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let report_path = dir.join(REPORT_FILE);
        let mut json = serde_json::to_vec_pretty(self).expect("report serializes");
        json.push(b'\n');
        std::fs::write(&report_path, json).map_err(io_err(&report_path))?;

        let csv_path = dir.join(PER_EXAMPLE_FILE);
        let csv_err = |source| EvalError::Csv { path: csv_path.clone(), source };
        let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
        for row in &self.per_example {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush().map_err(io_err(&csv_path))?;
        Ok(dir)
    }
}

/// Scores one example. Pipeline failures become a failed row, not an error.
fn evaluate_example(ex: &QAExample, history: &[ConversationTurn], engine: &Engine) -> ExampleRow {
    let known: Vec<&String> = ex.gold_clue_ids.iter().filter(|id| engine.index().clue(id).is_some()).collect();
    let warning = (known.len() < ex.gold_clue_ids.len()).then(|| {
        let missing: Vec<&str> = ex
            .gold_clue_ids
            .iter()
            .filter(|id| engine.index().clue(id).is_none())
            .map(String::as_str)
            .collect();
        format!("gold clue ids not in index: {}", missing.join(", "))
    });
    let has_gold = !ex.gold_clue_ids.is_empty();
    let keywords = ex.gold_keywords.as_deref().filter(|k| !k.is_empty());

    match engine.answer_with_gold(history, &ex.question, &ex.gold_clue_ids) {
        Ok(env) => {
            let text = &env.answer.text;
            let selected: Vec<&str> = env.ranked_clues.selected().iter().map(|r| r.clue_id.as_str()).collect();
            let retrieved: Vec<&str> = env.retrieval.ids().collect();
            let predicted = &selected[..selected.len().min(ex.gold_clue_ids.len())];
            let gold: Vec<&str> = ex.gold_clue_ids.iter().map(String::as_str).collect();
            let recall = |ids: &[&str]| gold.iter().filter(|g| ids.contains(g)).count() as f64 / gold.len() as f64;
            ExampleRow {
                qid: ex.qid.clone(),
                em: exact_match(text, &ex.gold_answers),
                f1: token_f1(text, &ex.gold_answers),
                retrieval_f1: has_gold.then(|| retrieval_f1(predicted, &gold)),
                keyword_acc: keywords.map(|k| keyword_accuracy(text, k)),
                recall_at_k: has_gold.then(|| recall(&retrieved)),
                gold_in_top_n: has_gold.then(|| if recall(&selected) > 0.0 { 1.0 } else { 0.0 }),
                top_clue_id: selected.first().map(|s| s.to_string()),
                answer: text.clone(),
                warning,
                error: None,
            }
        }
        Err(e) => ExampleRow {
            qid: ex.qid.clone(),
            em: 0.0,
            f1: 0.0,
            retrieval_f1: has_gold.then_some(0.0),
            keyword_acc: keywords.map(|_| 0.0),
            recall_at_k: has_gold.then_some(0.0),
            gold_in_top_n: has_gold.then_some(0.0),
            top_clue_id: None,
            answer: String::new(),
            warning,
            error: Some(format!("{}: {e}", e.stage())),
        },
    }
}

/// Groups examples into conversations, each ordered by turn. Examples
/// without a conversation id stand alone.
fn conversations(dataset: &[QAExample]) -> Vec<Vec<&QAExample>> {
    let mut grouped: BTreeMap<(bool, &str), Vec<&QAExample>> = BTreeMap::new();
    for ex in dataset {
        let key = match &ex.conversation_id {
            Some(c) => (true, c.as_str()),
            None => (false, ex.qid.as_str()),
        };
        grouped.entry(key).or_default().push(ex);
    }
    let mut out: Vec<_> = grouped.into_values().collect();
    for conv in &mut out {
        conv.sort_by(|a, b| a.turn.cmp(&b.turn).then_with(|| a.qid.cmp(&b.qid)));
    }
    out
}

/// Runs every example through `engine`. Prior turns of a conversation enter
/// the history with their first gold answer.
pub fn run_eval(
    dataset: &[QAExample],
    engine: &Engine,
    ablation: &TextualizationConfig,
) -> Result<MetricsReport, EvalError> {
    let built = engine.manifest().textualization;
    if built.use_global != ablation.use_global || built.use_local != ablation.use_local {
        return Err(EvalError::AblationMismatch {
            index_global: built.use_global,
            index_local: built.use_local,
            global: ablation.use_global,
            local: ablation.use_local,
        });
    }
    let rows: Vec<ExampleRow> = conversations(dataset)
        .par_iter()
        .flat_map_iter(|conv| {
            let mut history = Vec::new();
            conv.iter()
                .map(|ex| {
                    let row = evaluate_example(ex, &history, engine);
                    history.push(ConversationTurn {
                        question: ex.question.clone(),
                        answer: ex.gold_answers[0].clone(),
                    });
                    row
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let mut settings = RunSettings::from_config(engine.config());
    settings.textualization.use_global = ablation.use_global;
    settings.textualization.use_local = ablation.use_local;
    Ok(MetricsReport::from_rows(settings, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub textualization: TextualizationConfig,
    pub rejected: usize,
    pub report: MetricsReport,
}

/// The standard ablation grid: full, global only, local only.
pub fn ablation_grid(base: &TextualizationConfig) -> Vec<TextualizationConfig> {
    [(true, true), (true, false), (false, true)]
        .into_iter()
        .map(|(use_global, use_local)| TextualizationConfig { use_global, use_local, ..*base })
        .collect()
}

/// Builds an in-memory index per textualization setting and evaluates each.
pub fn run_ablation(
    docs: &[(usize, SourceDoc)],
    dataset: &[QAExample],
    base: &PipelineConfig,
    settings: &[TextualizationConfig],
) -> Result<Vec<AblationRun>, EvalError> {
    let embedder = EmbeddingProvider::from_spec(&base.embedder).map_err(PipelineError::Index)?;
    settings
        .iter()
        .map(|t| {
            let (index, rejected) = build_corpus_index(docs, t, &embedder)?;
            let manifest = IndexManifest::describe(&index, t);
            let config = PipelineConfig { textualization: *t, ..base.clone() };
            let engine = Engine::with_index(Arc::new(index), manifest, config)?;
            Ok(AblationRun { textualization: *t, rejected: rejected.len(), report: run_eval(dataset, &engine, t)? })
        })
        .collect()
}
