//! Experiment configuration files.
//!
//! A config is one JSON document:
//!
//! ```json
//! {
//!   "dataset": { "n_examples": 50000, "feature_dim": 20, "n_classes": 10,
//!                "source": { "kind": "synthetic-blobs", "spread": 0.04, "center_scale": 0.04 },
//!                "seed": 1, "order_seed": 0 },
//!   "learner": { "learner": "linear", "lr0": 0.1, "momentum": 0.9, "batch_size": 64 },
//!   "harness": { "replay_steps": 5, "storage_fraction": 0.01, "sampling": "prioritized",
//!                "importance_weights": true, "alpha_schedule": "scaled", "seed": 0 },
//!   "sweep": { "replay_steps": [1, 3, 5, 8], "storage_fractions": [0.01, 0.05, 0.1] },
//!   "n_seeds": 10,
//!   "output_dir": "out"
//! }
//! ```
//!
//! Every section except `dataset` may be omitted and falls back to defaults.

use std::fs;
use std::path::{Path, PathBuf};

use onepass_core::{DatasetSpec, Error as CoreError, HarnessConfig, LearnerConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Axes of a replay-steps × storage grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub replay_steps: Vec<usize>,
    pub storage_fractions: Vec<f64>,
    /// Also run multi-epoch training for every effective-epoch row.
    pub multi_epoch: bool,
    /// Also run the naive one-pass baseline.
    pub naive: bool,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            replay_steps: vec![1, 3, 5, 8],
            storage_fractions: vec![0.01, 0.05, 0.10],
            multi_epoch: true,
            naive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub harness: HarnessConfig,
    #[serde(default)]
    pub sweep: SweepAxes,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_n_seeds() -> u64 {
    1
}

/// A config problem attributable to one field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.field.is_empty() {
            write!(f, "invalid config: {}", self.message)
        } else {
            write!(f, "invalid config field `{}`: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }

    fn nested(section: &str, err: CoreError) -> Self {
        match err {
            CoreError::Config { field, message } => Self::new(format!("{section}.{field}"), message),
            other => Self::new(section, other.to_string()),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new("", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Training-set size implied by the dataset section, when it is known
    /// without reading files.
    fn n_train_hint(&self) -> Option<usize> {
        match self.dataset.source {
            onepass_core::DatasetSource::SyntheticBlobs { .. } => {
                Some(self.dataset.n_examples - self.dataset.n_examples / 10)
            }
            onepass_core::DatasetSource::File { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.dataset
            .validate()
            .map_err(|e| ConfigError::nested("dataset", e))?;
        self.learner
            .validate()
            .map_err(|e| ConfigError::nested("learner", e))?;
        self.harness
            .validate()
            .map_err(|e| ConfigError::nested("harness", e))?;
        if self.n_seeds == 0 {
            return Err(ConfigError::new("n_seeds", "must be at least 1"));
        }
        if let Some(&s) = self
            .sweep
            .storage_fractions
            .iter()
            .find(|s| !(0.0..=1.0).contains(*s))
        {
            return Err(ConfigError::new(
                "sweep.storage_fractions",
                format!("{s} is outside [0, 1]"),
            ));
        }
        if let Some(n) = self.n_train_hint() {
            self.harness
                .validate_for(n)
                .map_err(|e| ConfigError::nested("harness", e))?;
            for &s in &self.sweep.storage_fractions {
                if (s * n as f64).round() < 1.0 && self.sweep.replay_steps.iter().any(|&k| k > 0) {
                    return Err(ConfigError::new(
                        "sweep.storage_fractions",
                        format!("{s} of {n} training examples is an empty buffer"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Checks needed only by `sweep`.
    pub fn validate_sweep(&self) -> Result<(), ConfigError> {
        if self.sweep.replay_steps.is_empty() {
            return Err(ConfigError::new("sweep.replay_steps", "must not be empty"));
        }
        if self.sweep.storage_fractions.is_empty() {
            return Err(ConfigError::new("sweep.storage_fractions", "must not be empty"));
        }
        Ok(())
    }

    /// `(run seed, order seed)` of the `i`-th repetition.
    pub fn seeds(&self, i: u64) -> (u64, u64) {
        (
            self.harness.seed.wrapping_add(i),
            self.dataset.order_seed.wrapping_add(i),
        )
    }
}
