//! Error-based replay priorities and the importance weights that undo them.
//!
//! An example's priority is `1 - alpha * exp(-loss)`. With cross-entropy loss
//! `exp(-loss)` is the model's probability on the true label, so the priority
//! is one minus the (smoothed) confidence. Replay batches are drawn with
//! probability proportional to priority and reweighted by `1 / priority`,
//! normalized to mean 1 within the batch.

mod schedule;
mod sum_tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::Example;

pub use schedule::{alpha_schedule, AlphaSchedule, ScheduleState};
pub use sum_tree::SumTree;

/// Lower bound on any stored priority.
///
/// `alpha = 1` and `loss = 0` would otherwise produce a zero priority: an
/// unsampleable slot with an infinite importance weight.
pub const DEFAULT_PRIORITY_FLOOR: f64 = 1e-3;

/// How replay slots are chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Proportional to stored priority.
    #[default]
    Prioritized,
    /// Uniform over occupied slots, unit weights (vanilla experience replay).
    Uniform,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

fn check_floor(floor: f64) -> Result<()> {
    if !(floor > 0.0 && floor <= 1.0) {
        return Err(Error::domain(format!("priority floor must lie in (0, 1], got {floor}")));
    }
    Ok(())
}

/// `1 - alpha * exp(-loss)` before the floor is applied.
pub fn raw_priority(loss: f64, alpha: f64) -> Result<f64> {
    if loss.is_nan() || loss < 0.0 {
        return Err(Error::domain(format!("loss must be >= 0, got {loss}")));
    }
    check_alpha(alpha)?;
    Ok(1.0 - alpha * (-loss).exp())
}

/// Replay priority of an example with the given loss, clamped to `[floor, 1]`.
pub fn priority(loss: f64, alpha: f64, floor: f64) -> Result<f64> {
    check_floor(floor)?;
    Ok(raw_priority(loss, alpha)?.max(floor))
}

/// Same value as [`priority`] for cross-entropy, written in terms of the
/// predicted probability `f_y` of the true label.
pub fn priority_from_confidence(f_y: f64, alpha: f64, floor: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f_y) {
        return Err(Error::domain(format!("probability must lie in [0, 1], got {f_y}")));
    }
    check_alpha(alpha)?;
    check_floor(floor)?;
    Ok((1.0 - alpha * f_y).max(floor))
}

/// Inverse-priority weights rescaled to mean 1.
///
/// Lower priority gives strictly higher weight. Equal priorities give weights
/// of exactly 1.
pub fn importance_weights(priorities: &[f64], floor: f64) -> Result<Vec<f64>> {
    check_floor(floor)?;
    if priorities.is_empty() {
        return Err(Error::domain("no priorities to weight"));
    }
    if let Some(p) = priorities.iter().find(|p| !(**p >= floor && p.is_finite())) {
        return Err(Error::domain(format!("priority {p} below floor {floor}")));
    }
    if priorities.iter().all(|&p| p == priorities[0]) {
        return Ok(vec![1.0; priorities.len()]);
    }
    let raw: Vec<f64> = priorities.iter().map(|p| 1.0 / p).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|r| r / mean).collect())
}

/// Where the examples of a [`WeightedBatch`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchSource {
    Incoming,
    Replay,
}

/// A mini-batch together with its per-example loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBatch {
    pub examples: Vec<Example>,
    pub weights: Vec<f64>,
    pub source: BatchSource,
}

impl WeightedBatch {
    /// Freshly streamed examples; every weight is exactly 1.
    pub fn incoming(examples: Vec<Example>) -> Self {
        let weights = vec![1.0; examples.len()];
        Self {
            examples,
            weights,
            source: BatchSource::Incoming,
        }
    }

    /// Replayed examples with weights that must average to 1.
    pub fn replay(examples: Vec<Example>, weights: Vec<f64>) -> Result<Self> {
        let batch = Self {
            examples,
            weights,
            source: BatchSource::Replay,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        if self.weights.len() != self.examples.len() {
            return Err(Error::Shape {
                expected: self.examples.len(),
                got: self.weights.len(),
            });
        }
        match self.source {
            BatchSource::Incoming => {
                if self.weights.iter().any(|&w| w != 1.0) {
                    return Err(Error::domain("incoming batch weights must all be 1"));
                }
            }
            BatchSource::Replay => {
                if self.weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
                    return Err(Error::domain("replay weights must be finite and positive"));
                }
                let mean = self.weights.iter().sum::<f64>() / self.weights.len() as f64;
                if (mean - 1.0).abs() > 1e-9 {
                    return Err(Error::domain(format!("replay weights average {mean}, not 1")));
                }
            }
        }
        Ok(())
    }
}
