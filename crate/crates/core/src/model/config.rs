use serde::{Deserialize, Serialize};

use crate::error::{KerpleError, Result};
use crate::kernel::Variant;

/// Hyperparameters of the toy decoder and its optimizer.
///
/// Defaults are the desk-scale configuration: a byte-level, two-layer,
/// four-head model that trains in minutes on one core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_hidden: usize,
    pub train_len: usize,
    pub variant: Variant,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Standard deviation of the Gaussian weight initialization.
    pub init_std: f64,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            layers: 2,
            heads: 4,
            head_dim: 16,
            mlp_hidden: 128,
            train_len: 64,
            variant: Variant::Log,
            batch_size: 16,
            steps: 2000,
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            init_std: 0.02,
            log_every: 50,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Total trainable kernel scalars; independent of the layer count
    /// because kernels are shared across layers.
    pub fn kernel_param_count(&self) -> usize {
        self.variant.arity() * self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("mlp_hidden", self.mlp_hidden),
            ("batch_size", self.batch_size),
            ("log_every", self.log_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(KerpleError::Config(format!("{name} must be positive")));
            }
        }
        if self.train_len < 2 {
            return Err(KerpleError::Config("train_len must be at least 2".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(KerpleError::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(KerpleError::Config("moment decay rates must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0 && self.init_std > 0.0) {
            return Err(KerpleError::Config("epsilon and init_std must be positive".into()));
        }
        Ok(())
    }

    /// Parses a `key = value` configuration document. Missing keys keep
    /// their defaults; unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| KerpleError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the keys present in `text` on top of `self`.
    pub fn with_overrides(&self, text: &str) -> Result<Self> {
        let mut base = toml::Table::try_from(self).map_err(|e| KerpleError::Config(e.to_string()))?;
        let overrides: toml::Table = text.parse().map_err(|e: toml::de::Error| KerpleError::Config(e.to_string()))?;
        base.extend(overrides);
        let cfg: ModelConfig = base.try_into().map_err(|e: toml::de::Error| KerpleError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}
