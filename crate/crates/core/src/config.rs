//! Pipeline configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::filter::FilterPolicy;
use crate::gateway::{GatewayLimits, GenerationParams, RetryPolicy};
use crate::prompt::LanguageTable;
use crate::seeds::DEFAULT_EXCLUDED_TASKS;
use crate::taxonomy::TaxonomyRegistry;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub per_language: usize,
    pub per_task_per_language: usize,
    pub excluded_tasks: Vec<String>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            per_language: 100,
            per_task_per_language: 6,
            excluded_tasks: DEFAULT_EXCLUDED_TASKS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LanguageConfig {
    /// Partner-language pool for cross-lingual conditions. Empty means the
    /// languages present in the sampled seeds.
    pub pool: Vec<String>,
    /// Romanization-capable languages. `None` uses the shipped table.
    pub transliteration: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogueConfig {
    pub max_followups: usize,
    /// Conversations per (task, language) drawn from task-seed evols.
    /// `None` converts every one.
    pub subset_per_task_language: Option<usize>,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        Self {
            max_followups: 3,
            subset_per_task_language: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct PipelineConfig {
    pub rng_seed: u64,
    pub taxonomy_path: Option<PathBuf>,
    pub backend_url: Option<String>,
    pub sampling: SamplingConfig,
    pub generation: GenerationParams,
    pub languages: LanguageConfig,
    pub dialogue: DialogueConfig,
    pub gateway: GatewayLimits,
    pub retry: RetryPolicy,
    pub filter: FilterPolicy,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(1..=3).contains(&self.dialogue.max_followups) {
            return bad("dialogue.max_followups must be 1..=3");
        }
        if self.filter.n == 0 || self.filter.threshold < 2 {
            return bad("filter needs n >= 1 and threshold >= 2");
        }
        if self.filter.min_tokens > self.filter.max_tokens {
            return bad("filter.min_tokens exceeds filter.max_tokens");
        }
        if self.generation.max_tokens == 0 {
            return bad("generation.max_tokens must be positive");
        }
        for t in [
            self.generation.instruction_temperature,
            self.generation.response_temperature,
        ] {
            if !(0.0..=2.0).contains(&t) {
                return bad("temperatures must lie in [0, 2]");
            }
        }
        self.retry.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn transliteration_pool(&self, table: &LanguageTable) -> Vec<String> {
        self.languages
            .transliteration
            .clone()
            .unwrap_or_else(|| table.romanization.clone())
    }

    /// Hex SHA-256 over the canonical JSON of this config and the taxonomy.
    /// Settings that cannot change outputs (gateway limits, backend URL,
    /// taxonomy path) are left out.
    pub fn fingerprint(&self, registry: &TaxonomyRegistry) -> String {
        let content = PipelineConfig {
            taxonomy_path: None,
            backend_url: None,
            gateway: GatewayLimits::default(),
            ..self.clone()
        };
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&content).expect("config serialises"));
        h.update(b"\n");
        h.update(registry.to_json().as_bytes());
        hex::encode(h.finalize())
    }
}
