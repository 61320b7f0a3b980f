//! Line-delimited corpus records.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{ImageMeta, Modality, ObjectAttr, SourceDoc, TableDoc, TextDoc};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableBody {
    pub header: Vec<String>,
    #[serde(default)]
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageBody {
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub objects: Vec<ObjectAttr>,
}

/// One corpus line. Exactly one of `text`, `table`, `image` must be present
/// and it must match `modality`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableBody>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageBody>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordError {
    /// 1-based line number in the corpus file.
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

impl std::fmt::Display for RecordError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} ({id}): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

impl CorpusRecord {
    pub fn into_source_doc(self) -> Result<SourceDoc, String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        let present = [self.text.is_some(), self.table.is_some(), self.image.is_some()]
            .iter()
            .filter(|p| **p)
            .count();
        if present != 1 {
            return Err(format!("expected exactly one content field, found {present}"));
        }
        match (self.modality, self.text, self.table, self.image) {
            (Modality::Text, Some(text), None, None) => Ok(SourceDoc::Text(TextDoc {
                id: self.id,
                title: self.title,
                text,
            })),
            (Modality::Table, None, Some(t), None) => Ok(SourceDoc::Table(TableDoc {
                id: self.id,
                title: self.title,
                header: t.header,
                rows: t.rows,
            })),
            (Modality::Image, None, None, Some(i)) => Ok(SourceDoc::Image(ImageMeta {
                id: self.id,
                title: self.title,
                caption: i.caption,
                objects: i.objects,
            })),
            (m, ..) => Err(format!("content field does not match modality {m}")),
        }
    }
}

/// Reads every non-blank line, pairing each document with its 1-based line
/// number. Malformed lines are reported, not fatal.
pub fn parse_corpus<R: BufRead>(reader: R) -> std::io::Result<(Vec<(usize, SourceDoc)>, Vec<RecordError>)> {
    let mut docs = Vec::new();
    let mut errors = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(RecordError { line: index + 1, id: None, message: e.to_string() });
                continue;
            }
        };
        let id = record.id.clone();
        match record.into_source_doc() {
            Ok(doc) => docs.push((index + 1, doc)),
            Err(message) => errors.push(RecordError { line: index + 1, id: Some(id), message }),
        }
    }
    Ok((docs, errors))
}
