//! Learner interface and the reference softmax classifier.

mod softmax;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priority::WeightedBatch;
use crate::stream::Example;

pub use softmax::{LayerShape, LearnerParams};

/// Smallest / largest probability that enters the loss.
pub const PROB_CLAMP: f64 = 1e-12;

/// Anything the training loop can drive.
pub trait Learner {
    fn n_classes(&self) -> usize;

    /// Class probabilities for `x`: non-negative, summing to 1.
    fn predict(&self, x: &[f32]) -> Result<Vec<f64>>;

    /// One optimizer step on the weighted mean loss of `batch`.
    fn grad_step(&mut self, batch: &WeightedBatch, lr: f64, config: &OptimizerConfig) -> Result<()>;

    /// Cross-entropy `-log f_y(x)` with the probability clamped to
    /// `[1e-12, 1 - 1e-12]`.
    fn loss(&self, x: &[f32], y: u32) -> Result<f64> {
        let y = y as usize;
        if y >= self.n_classes() {
            return Err(Error::domain(format!(
                "label {y} out of range for {} classes",
                self.n_classes()
            )));
        }
        let p = self.predict(x)?[y];
        Ok(-p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln())
    }

    /// Argmax of [`Learner::predict`], ties going to the lowest class index.
    fn predict_class(&self, x: &[f32]) -> Result<u32> {
        let probs = self.predict(x)?;
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate().skip(1) {
            if p > probs[best] {
                best = i;
            }
        }
        Ok(best as u32)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    /// Softmax regression.
    #[default]
    Linear,
    /// One tanh hidden layer.
    Mlp,
}

/// User-facing learner settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    #[serde(rename = "learner")]
    pub kind: LearnerKind,
    pub hidden_dim: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::Linear,
            hidden_dim: 32,
            lr0: 0.1,
            momentum: 0.9,
            batch_size: 128,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::config("lr0", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.kind == LearnerKind::Mlp && self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim", "must be at least 1 for the mlp learner"));
        }
        Ok(())
    }

    pub fn shape(&self, input_dim: usize, n_classes: usize) -> LayerShape {
        LayerShape {
            input_dim,
            hidden_dim: match self.kind {
                LearnerKind::Linear => 0,
                LearnerKind::Mlp => self.hidden_dim,
            },
            n_classes,
        }
    }

    pub fn optimizer(&self, t_max: u64) -> OptimizerConfig {
        OptimizerConfig {
            initial_lr: self.lr0,
            momentum: self.momentum,
            batch_size: self.batch_size,
            t_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub initial_lr: f64,
    /// Nesterov momentum coefficient.
    pub momentum: f64,
    pub batch_size: usize,
    /// Total gradient steps planned for the run.
    pub t_max: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.1,
            momentum: 0.9,
            batch_size: 128,
            t_max: 1,
        }
    }
}

/// Cosine decay from `initial_lr` at step 0 to 0 at `t_max`.
pub fn cosine_lr(step: u64, config: &OptimizerConfig) -> Result<f64> {
    if config.t_max == 0 {
        return Err(Error::domain("t_max must be positive"));
    }
    if step > config.t_max {
        return Err(Error::domain(format!("step {step} exceeds t_max {}", config.t_max)));
    }
    if step == config.t_max {
        return Ok(0.0);
    }
    let progress = step as f64 / config.t_max as f64;
    Ok(0.5 * config.initial_lr * (1.0 + (PI * progress).cos()))
}

/// Top-1 accuracy of `learner` on `test_set`.
pub fn evaluate<L: Learner + ?Sized>(learner: &L, test_set: &[Example]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::domain("cannot evaluate on an empty test set"));
    }
    let mut correct = 0usize;
    for ex in test_set {
        if learner.predict_class(&ex.features)? == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_set.len() as f64)
}
