//! Unified language representation: every source becomes a text clue.

mod image;
mod record;
mod table;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use image::{textualize_image, ImageMeta, ObjectAttr};
pub use record::{parse_corpus, CorpusRecord, RecordError};
pub use table::{linearize_table, ordinal, reconstruct_table, TableDoc, TableParseError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UnirepError {
    #[error("table header is empty")]
    EmptyHeader,
    #[error("row {row} has {found} cells, header has {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("invalid image metadata: {0}")]
    InvalidImage(String),
    #[error("both global and local textualization are disabled")]
    TextualizationDisabled,
    #[error("image has no text under the enabled textualization parts")]
    EmptyTextualization,
    #[error("text document is empty")]
    EmptyText,
    #[error("question is empty")]
    EmptyQuestion,
    #[error("max_history_turns must be positive")]
    ZeroHistoryWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Table,
    Image,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Table => "table",
            Modality::Image => "image",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One element of the unified space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clue {
    pub id: String,
    pub modality: Modality,
    pub text: String,
    pub source_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct TextualizationConfig {
    pub use_global: bool,
    pub use_local: bool,
    pub max_history_turns: usize,
}

impl Default for TextualizationConfig {
    fn default() -> Self {
        Self {
            use_global: true,
            use_local: true,
            max_history_turns: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationTurn {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextualQuestion {
    pub text: String,
    pub turn_count: usize,
}

/// Prefixes the current question with the most recent turns, rendered as
/// `Q: <question> A: <answer>` and followed by `Q: <current>`. Without history
/// the current question is returned unchanged.
pub fn build_contextual_question(
    history: &[ConversationTurn],
    current: &str,
    cfg: &TextualizationConfig,
) -> Result<ContextualQuestion, UnirepError> {
    if current.trim().is_empty() {
        return Err(UnirepError::EmptyQuestion);
    }
    if cfg.max_history_turns == 0 {
        return Err(UnirepError::ZeroHistoryWindow);
    }
    let kept = &history[history.len().saturating_sub(cfg.max_history_turns)..];
    if kept.is_empty() {
        return Ok(ContextualQuestion {
            text: current.to_string(),
            turn_count: 0,
        });
    }
    let mut text = String::new();
    for turn in kept {
        text.push_str("Q: ");
        text.push_str(&turn.question);
        text.push_str(" A: ");
        text.push_str(&turn.answer);
        text.push(' ');
    }
    text.push_str("Q: ");
    text.push_str(current);
    Ok(ContextualQuestion {
        text,
        turn_count: kept.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextDoc {
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceDoc {
    Text(TextDoc),
    Table(TableDoc),
    Image(ImageMeta),
}

impl SourceDoc {
    pub fn id(&self) -> &str {
        match self {
            SourceDoc::Text(d) => &d.id,
            SourceDoc::Table(d) => &d.id,
            SourceDoc::Image(d) => &d.id,
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            SourceDoc::Text(_) => Modality::Text,
            SourceDoc::Table(_) => Modality::Table,
            SourceDoc::Image(_) => Modality::Image,
        }
    }
}

pub fn make_clue(doc: &SourceDoc, cfg: &TextualizationConfig) -> Result<Clue, UnirepError> {
    let text = match doc {
        SourceDoc::Text(d) => {
            if d.text.trim().is_empty() {
                return Err(UnirepError::EmptyText);
            }
            match d.title.as_deref().filter(|t| !t.is_empty()) {
                Some(title) => format!("{title}. {}", d.text),
                None => d.text.clone(),
            }
        }
        SourceDoc::Table(t) => linearize_table(t)?,
        SourceDoc::Image(m) => textualize_image(m, cfg)?,
    };
    Ok(Clue {
        id: doc.id().to_string(),
        modality: doc.modality(),
        text,
        source_ref: doc.id().to_string(),
    })
}
