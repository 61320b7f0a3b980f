use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::generation::GeneratorProviderSpec;
use crate::ranker::CrossScorerSpec;
use crate::retrieval::EmbeddingProviderSpec;
use crate::unirep::TextualizationConfig;

pub const DEFAULT_TOP_K: usize = 30;
pub const DEFAULT_TOP_N: usize = 10;

/// Everything that shapes an answer. Loadable from a TOML file; CLI flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub top_k: usize,
    pub top_n: usize,
    pub embedder: EmbeddingProviderSpec,
    pub scorer: CrossScorerSpec,
    pub generator: GeneratorProviderSpec,
    pub textualization: TextualizationConfig,
    pub index_path: Option<PathBuf>,
    /// Add gold clues to the retrieved set during evaluation.
    pub inject_gold: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            top_n: DEFAULT_TOP_N,
            embedder: EmbeddingProviderSpec::default(),
            scorer: CrossScorerSpec::default(),
            generator: GeneratorProviderSpec::default(),
            textualization: TextualizationConfig::default(),
            index_path: None,
            inject_gold: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.top_k == 0 || self.top_n == 0 {
            return Err(PipelineError::Config("top_k and top_n must be positive".into()));
        }
        if self.top_n > self.top_k {
            return Err(PipelineError::Config(format!(
                "top_n ({}) must not exceed top_k ({})",
                self.top_n, self.top_k
            )));
        }
        if self.textualization.max_history_turns == 0 {
            return Err(PipelineError::Config("max_history_turns must be positive".into()));
        }
        self.embedder.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.scorer.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.generator.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }
}
