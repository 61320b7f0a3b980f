use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::embed::{dot, EmbedderKind, EmbeddingProvider, EmbeddingVector};
use super::RetrievalError;
use crate::unirep::{Clue, ContextualQuestion, TextualizationConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VECTORS_FILE: &str = "vectors.f32";
pub const CLUES_FILE: &str = "clues.jsonl";
const FORMAT_VERSION: u32 = 1;

/// Exact-search index over the embedded corpus. Immutable once built.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dimension: usize,
    provider_kind: EmbedderKind,
    clues: Vec<Clue>,
    /// Row-major, `clues.len() * dimension`.
    vectors: Vec<f32>,
    positions: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredClue {
    pub clue_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub k: usize,
    pub items: Vec<ScoredClue>,
}

impl RetrievalResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.clue_id.as_str())
    }
}

/// Descending score, then ascending id.
pub(crate) fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

pub fn build_index(clues: Vec<Clue>, provider: &EmbeddingProvider) -> Result<VectorIndex, RetrievalError> {
    let positions = positions_of(&clues)?;
    let texts: Vec<&str> = clues.iter().map(|c| c.text.as_str()).collect();
    let embedded = provider.embed_batch(&texts)?;
    let dimension = provider.spec().dimension;
    let mut vectors = Vec::with_capacity(clues.len() * dimension);
    for v in &embedded {
        vectors.extend_from_slice(v.values());
    }
    Ok(VectorIndex {
        dimension,
        provider_kind: provider.spec().kind,
        clues,
        vectors,
        positions,
    })
}

fn positions_of(clues: &[Clue]) -> Result<HashMap<String, usize>, RetrievalError> {
    let mut positions = HashMap::with_capacity(clues.len());
    for (i, clue) in clues.iter().enumerate() {
        if positions.insert(clue.id.clone(), i).is_some() {
            return Err(RetrievalError::DuplicateId(clue.id.clone()));
        }
    }
    Ok(positions)
}

pub fn retrieve_topk(
    question: &ContextualQuestion,
    index: &VectorIndex,
    k: usize,
    provider: &EmbeddingProvider,
) -> Result<RetrievalResult, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    index.check_provider(provider)?;
    if index.is_empty() {
        return Ok(RetrievalResult { k, items: Vec::new() });
    }
    let query = provider.embed(&question.text)?;
    index.search(&query, k)
}

impl VectorIndex {
    pub fn len(&self) -> usize {
        self.clues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clues.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provider_kind(&self) -> EmbedderKind {
        self.provider_kind
    }

    pub fn clues(&self) -> &[Clue] {
        &self.clues
    }

    pub fn clue(&self, id: &str) -> Option<&Clue> {
        self.positions.get(id).map(|&i| &self.clues[i])
    }

    pub fn vector(&self, id: &str) -> Option<EmbeddingVector> {
        self.positions.get(id).map(|&i| EmbeddingVector::from_stored(self.row(i).to_vec()))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn check_provider(&self, provider: &EmbeddingProvider) -> Result<(), RetrievalError> {
        let spec = provider.spec();
        if spec.dimension != self.dimension || spec.kind != self.provider_kind {
            return Err(RetrievalError::ProviderMismatch {
                index: format!("{:?}/{}", self.provider_kind, self.dimension),
                provider: format!("{:?}/{}", spec.kind, spec.dimension),
            });
        }
        Ok(())
    }

    /// Similarity of `query` against one stored clue.
    pub fn score(&self, query: &EmbeddingVector, id: &str) -> Option<f64> {
        self.positions.get(id).map(|&i| dot(query.values(), self.row(i)))
    }

    /// Exact top-`k` by dot product: full scan, partial selection, then a sort
    /// of the selected prefix.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<RetrievalResult, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if query.dimension() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension,
                found: query.dimension(),
            });
        }
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .map(|i| (dot(query.values(), self.row(i)), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            rank_order(a.0, &self.clues[a.1].id, b.0, &self.clues[b.1].id)
        };
        let take = k.min(scored.len());
        if take < scored.len() {
            scored.select_nth_unstable_by(take - 1, cmp);
            scored.truncate(take);
        }
        scored.sort_unstable_by(cmp);
        Ok(RetrievalResult {
            k,
            items: scored
                .into_iter()
                .map(|(score, i)| ScoredClue { clue_id: self.clues[i].id.clone(), score })
                .collect(),
        })
    }

    /// SHA-256 over the clue records in index order.
    pub fn corpus_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.clues {
            for part in [c.id.as_str(), c.modality.as_str(), c.text.as_str(), c.source_ref.as_str()] {
                h.update((part.len() as u64).to_le_bytes());
                h.update(part.as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Writes manifest, little-endian `f32` vectors and the clue table.
    pub fn save(&self, dir: &Path, textualization: &TextualizationConfig) -> Result<IndexManifest, RetrievalError> {
        fs::create_dir_all(dir)?;
        let manifest = IndexManifest::describe(self, textualization);

        let mut vectors = BufWriter::new(fs::File::create(dir.join(VECTORS_FILE))?);
        for v in &self.vectors {
            vectors.write_all(&v.to_le_bytes())?;
        }
        vectors.flush()?;

        let mut clues = BufWriter::new(fs::File::create(dir.join(CLUES_FILE))?);
        for c in &self.clues {
            serde_json::to_writer(&mut clues, c)?;
            clues.write_all(b"\n")?;
        }
        clues.flush()?;

        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<(VectorIndex, IndexManifest), RetrievalError> {
        let manifest = IndexManifest::read(dir)?;

        let mut clues = Vec::with_capacity(manifest.count);
        for line in BufReader::new(fs::File::open(dir.join(CLUES_FILE))?).lines() {
            let line = line?;
            if !line.is_empty() {
                clues.push(serde_json::from_str::<Clue>(&line)?);
            }
        }
        let raw = fs::read(dir.join(VECTORS_FILE))?;
        if clues.len() != manifest.count || raw.len() != manifest.count * manifest.dimension * 4 {
            return Err(RetrievalError::Corrupt(format!(
                "manifest declares {} clues of dimension {}, found {} clues and {} vector bytes",
                manifest.count,
                manifest.dimension,
                clues.len(),
                raw.len()
            )));
        }
        let vectors = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let positions = positions_of(&clues)?;
        let index = VectorIndex {
            dimension: manifest.dimension,
            provider_kind: manifest.provider_kind,
            clues,
            vectors,
            positions,
        };
        if index.corpus_hash() != manifest.corpus_hash {
            return Err(RetrievalError::Corrupt("corpus hash mismatch".into()));
        }
        Ok((index, manifest))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format_version: u32,
    pub dimension: usize,
    pub provider_kind: EmbedderKind,
    pub count: usize,
    pub corpus_hash: String,
    pub textualization: TextualizationConfig,
    /// Hash of everything above; identical corpora and settings reproduce it.
    pub fingerprint: String,
}

impl IndexManifest {
    /// Reads only the manifest of the index stored in `dir`.
    pub fn read(dir: &Path) -> Result<Self, RetrievalError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(RetrievalError::MissingIndex(dir.display().to_string()));
        }
        let manifest: IndexManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(RetrievalError::Corrupt(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        Ok(manifest)
    }

    /// Describes `index` as [`VectorIndex::save`] would record it.
    pub fn describe(index: &VectorIndex, textualization: &TextualizationConfig) -> Self {
        let corpus_hash = index.corpus_hash();
        let mut h = Sha256::new();
        h.update(FORMAT_VERSION.to_le_bytes());
        h.update((index.dimension as u64).to_le_bytes());
        h.update(format!("{:?}", index.provider_kind).as_bytes());
        h.update((index.len() as u64).to_le_bytes());
        h.update(corpus_hash.as_bytes());
        h.update([u8::from(textualization.use_global), u8::from(textualization.use_local)]);
        Self {
            format_version: FORMAT_VERSION,
            dimension: index.dimension,
            provider_kind: index.provider_kind,
            count: index.len(),
            corpus_hash,
            textualization: *textualization,
            fingerprint: hex::encode(h.finalize()),
        }
    }
}
