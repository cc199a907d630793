//! Run configuration shared by the command line tool.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal_stream::CausalBlockConfig;
use crate::clustering_tracker::TrackerConfig;
use crate::embedding_loss::LossConfig;
use crate::geometry::PhotometricConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config: {0}")]
    Invalid(String),
}

/// Every tunable knob, loadable from JSON. Missing keys take their defaults;
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub loss: LossConfig,
    pub photometric: PhotometricConfig,
    pub causal: CausalBlockConfig,
    pub tracker: TrackerConfig,
    /// Embedding dimension `p`.
    pub embedding_dim: usize,
    /// Training clip length; also the default track life span.
    pub sequence_length: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            photometric: PhotometricConfig::default(),
            causal: CausalBlockConfig::default(),
            tracker: TrackerConfig::default(),
            embedding_dim: 8,
            sequence_length: 5,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::from_json_file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs always serialise")
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.tracker.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let l = &self.loss;
        let finite = [l.rho_a, l.rho_r, l.lambda_a, l.lambda_r, l.lambda_reg, l.lambda_vs];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ConfigError::Invalid("loss parameters must be finite and non-negative".into()));
        }
        if l.rho_a <= 0.0 || l.rho_r <= 0.0 {
            return Err(ConfigError::Invalid("radii must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.photometric.alpha) {
            return Err(ConfigError::Invalid(format!("alpha {} outside [0, 1]", self.photometric.alpha)));
        }
        if self.photometric.ssim_window.is_multiple_of(2) {
            return Err(ConfigError::Invalid("ssim_window must be odd".into()));
        }
        self.causal
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.tracker.life_span == 0 {
            return Err(ConfigError::Invalid("tracker.life_span must be at least 1".into()));
        }
        if self.embedding_dim == 0 || self.sequence_length == 0 {
            return Err(ConfigError::Invalid("embedding_dim and sequence_length must be positive".into()));
        }
        Ok(())
    }
}
