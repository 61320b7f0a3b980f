use std::collections::HashSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{PipelineConfig, PipelineError};
use crate::retrieval::{build_index, EmbeddingProvider, IndexManifest, VectorIndex};
use crate::unirep::{make_clue, parse_corpus, Clue, RecordError, SourceDoc, TextualizationConfig};

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub index_dir: PathBuf,
    pub manifest: IndexManifest,
    pub clue_count: usize,
    pub rejected: Vec<RecordError>,
}

/// Parses a corpus file. Duplicate ids abort; other bad records are returned.
pub fn load_corpus(path: &Path) -> Result<(Vec<(usize, SourceDoc)>, Vec<RecordError>), PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::Ingest(format!("{}: {e}", path.display())))?;
    let (docs, rejected) =
        parse_corpus(BufReader::new(file)).map_err(|e| PipelineError::Ingest(format!("{}: {e}", path.display())))?;
    let mut seen = HashSet::new();
    for (_, doc) in &docs {
        if !seen.insert(doc.id()) {
            return Err(PipelineError::DuplicateRecord(doc.id().to_string()));
        }
    }
    Ok((docs, rejected))
}

/// Turns documents into clues under `textualization` and embeds them.
/// Documents that fail textualization are reported and skipped.
pub fn build_corpus_index(
    docs: &[(usize, SourceDoc)],
    textualization: &TextualizationConfig,
    embedder: &EmbeddingProvider,
) -> Result<(VectorIndex, Vec<RecordError>), PipelineError> {
    let mut seen = HashSet::new();
    let mut clues: Vec<Clue> = Vec::with_capacity(docs.len());
    let mut rejected = Vec::new();
    for (line, doc) in docs {
        if !seen.insert(doc.id()) {
            return Err(PipelineError::DuplicateRecord(doc.id().to_string()));
        }
        match make_clue(doc, textualization) {
            Ok(clue) => clues.push(clue),
            Err(e) => rejected.push(RecordError {
                line: *line,
                id: Some(doc.id().to_string()),
                message: e.to_string(),
            }),
        }
    }
    let index = build_index(clues, embedder).map_err(PipelineError::Index)?;
    Ok((index, rejected))
}

pub fn ingest_and_index(corpus: &Path, out_dir: &Path, config: &PipelineConfig) -> Result<IngestReport, PipelineError> {
    config.validate()?;
    let (docs, mut rejected) = load_corpus(corpus)?;
    let embedder = EmbeddingProvider::from_spec(&config.embedder).map_err(PipelineError::Index)?;
    let (index, more) = build_corpus_index(&docs, &config.textualization, &embedder)?;
    rejected.extend(more);
    rejected.sort_by_key(|r| r.line);
    let manifest = index.save(out_dir, &config.textualization).map_err(PipelineError::Index)?;
    Ok(IngestReport {
        index_dir: out_dir.to_path_buf(),
        manifest,
        clue_count: index.len(),
        rejected,
    })
}
