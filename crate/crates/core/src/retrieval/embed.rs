//! Question/clue encoders behind a common provider interface.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::remote::{JsonClient, DEFAULT_MAX_IN_FLIGHT};

pub const DEFAULT_DIMENSION: usize = 256;
const REMOTE_BATCH: usize = 64;

/// Unit-norm embedding. Components are stored as `f32`; dot products
/// accumulate in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// L2-normalizes `raw`. Fails on a zero or non-finite vector.
    pub fn normalized(raw: &[f64]) -> Result<Self, RetrievalError> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFiniteVector);
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(RetrievalError::ZeroVector);
        }
        Ok(Self(raw.iter().map(|v| (v / norm) as f32).collect()))
    }

    pub(crate) fn from_stored(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    LocalHash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddingProviderSpec {
    pub kind: EmbedderKind,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

impl Default for EmbeddingProviderSpec {
    fn default() -> Self {
        Self::local(DEFAULT_DIMENSION)
    }
}

impl EmbeddingProviderSpec {
    pub fn local(dimension: usize) -> Self {
        Self { kind: EmbedderKind::LocalHash, dimension, endpoint: None }
    }

    pub fn remote(endpoint: impl Into<String>, dimension: usize) -> Self {
        Self { kind: EmbedderKind::Remote, dimension, endpoint: Some(endpoint.into()) }
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.dimension == 0 {
            return Err(RetrievalError::InvalidSpec("dimension must be positive".into()));
        }
        if self.kind == EmbedderKind::Remote && self.endpoint.as_deref().map_or(true, str::is_empty) {
            return Err(RetrievalError::InvalidSpec("remote embedder requires an endpoint".into()));
        }
        Ok(())
    }
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Signed feature hashing: each token adds ±1 to bucket `h mod D`, the sign
/// taken from bit 63 of its FNV-1a hash.
pub fn hash_embed(text: &str, dimension: usize) -> Result<EmbeddingVector, RetrievalError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(RetrievalError::NoTokens(truncate_for_error(text)));
    }
    let mut acc = vec![0.0f64; dimension];
    for token in &tokens {
        let h = fnv1a64(token.as_bytes());
        let bucket = (h % dimension as u64) as usize;
        acc[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    EmbeddingVector::normalized(&acc).map_err(|e| match e {
        // every token cancelled out
        RetrievalError::ZeroVector => RetrievalError::NoTokens(truncate_for_error(text)),
        other => other,
    })
}

fn truncate_for_error(text: &str) -> String {
    text.chars().take(60).collect()
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Concrete encoder built from an [`EmbeddingProviderSpec`].
#[derive(Debug)]
pub struct EmbeddingProvider {
    spec: EmbeddingProviderSpec,
    client: Option<JsonClient>,
}

impl EmbeddingProvider {
    /// Remote providers open an HTTP client; do not call from async code.
    pub fn from_spec(spec: &EmbeddingProviderSpec) -> Result<Self, RetrievalError> {
        spec.validate()?;
        let client = match spec.kind {
            EmbedderKind::LocalHash => None,
            EmbedderKind::Remote => Some(JsonClient::new(
                spec.endpoint.as_deref().unwrap_or_default(),
                DEFAULT_MAX_IN_FLIGHT,
            )),
        };
        Ok(Self { spec: spec.clone(), client })
    }

    pub fn spec(&self) -> &EmbeddingProviderSpec {
        &self.spec
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        if text.trim().is_empty() {
            return Err(RetrievalError::EmptyText);
        }
        let mut out = self.embed_batch(&[text])?;
        Ok(out.pop().expect("one vector per text"))
    }

    /// Order-preserving batch embedding.
    pub fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        match &self.client {
            None => texts.par_iter().map(|t| hash_embed(t, self.spec.dimension)).collect(),
            Some(client) => {
                let chunks: Vec<&[&str]> = texts.chunks(REMOTE_BATCH).collect();
                let parts: Vec<Vec<EmbeddingVector>> = chunks
                    .par_iter()
                    .map(|chunk| self.embed_remote(client, chunk))
                    .collect::<Result<_, _>>()?;
                Ok(parts.into_iter().flatten().collect())
            }
        }
    }

    fn embed_remote(&self, client: &JsonClient, texts: &[&str]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        let remote = |source| RetrievalError::Remote { endpoint: client.endpoint().to_string(), source };
        let response: EmbedResponse = client.post("embed", &EmbedRequest { texts }).map_err(remote)?;
        if response.vectors.len() != texts.len() {
            return Err(remote(client.shape_error(
                "embed",
                format!("expected {} vectors, got {}", texts.len(), response.vectors.len()),
            )));
        }
        response
            .vectors
            .iter()
            .map(|v| {
                if v.len() != self.spec.dimension {
                    return Err(remote(client.shape_error(
                        "embed",
                        format!("expected dimension {}, got {}", self.spec.dimension, v.len()),
                    )));
                }
                EmbeddingVector::normalized(v)
            })
            .collect()
    }
}
