//! One-pass training with error-prioritized replay, plus the two baselines.
//!
//! Per incoming mini-batch the loop does, in order:
//!
//! 1. one gradient step on the incoming batch with unit weights;
//! 2. `k` gradient steps on replay batches of the same size, drawn by
//!    priority and reweighted by inverse priority (skipped until the buffer
//!    holds one batch worth of examples);
//! 3. priority computation for the incoming examples under the updated
//!    parameters, followed by a reservoir insertion attempt for each.
//!
//! Learning rate and smoothing factor share the horizon
//! `T_max = (k + 1) * ceil(N / B)`.

use serde::{Deserialize, Serialize};

use crate::buffer::{BufferConfig, CodecKind, ReplayBuffer, SeenCounter};
use crate::error::{Error, Result};
use crate::learner::{cosine_lr, evaluate, Learner, LearnerConfig, LearnerParams, OptimizerConfig};
use crate::priority::{
    alpha_schedule, importance_weights, priority, AlphaSchedule, SamplingMode, ScheduleState,
    WeightedBatch, DEFAULT_PRIORITY_FLOOR,
};
use crate::stream::{one_pass_iter, Dataset, Example};
use crate::{derive_seed, seeded_rng, Rng};

const MODEL_STREAM: u64 = 0x10;
const BUFFER_STREAM: u64 = 0x11;
const SAMPLER_STREAM: u64 = 0x12;
const TRANSFORM_STREAM: u64 = 0x13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    /// Replay mini-batches per incoming mini-batch (`k`).
    pub replay_steps: usize,
    /// Buffer capacity as a fraction of the training set.
    pub storage_fraction: f64,
    /// Epoch count of the reference schedule the compute metric is relative to.
    pub baseline_epochs: u32,
    pub beta: f64,
    pub codec: CodecKind,
    pub sampling: SamplingMode,
    pub importance_weights: bool,
    pub update_priorities_on_replay: bool,
    pub alpha_schedule: AlphaSchedule,
    pub priority_floor: f64,
    /// Seeds model initialization, reservoir draws and replay sampling.
    pub seed: u64,
    /// Number of accuracy checkpoints; the last one is the end of training.
    pub eval_points: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            replay_steps: 5,
            storage_fraction: 0.01,
            baseline_epochs: 90,
            beta: 1.5,
            codec: CodecKind::Identity,
            sampling: SamplingMode::Prioritized,
            importance_weights: true,
            update_priorities_on_replay: false,
            alpha_schedule: AlphaSchedule::Scaled,
            priority_floor: DEFAULT_PRIORITY_FLOOR,
            seed: 0,
            eval_points: 20,
        }
    }
}

impl HarnessConfig {
    pub fn buffer_capacity(&self, n_train: usize) -> usize {
        (self.storage_fraction * n_train as f64).round() as usize
    }

    /// Field-level checks that do not depend on the dataset.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.storage_fraction) {
            return Err(Error::config(
                "storage_fraction",
                format!("must lie in [0, 1], got {}", self.storage_fraction),
            ));
        }
        if self.baseline_epochs == 0 {
            return Err(Error::config("baseline_epochs", "must be at least 1"));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::config("beta", "must be finite and > 0"));
        }
        if !(self.priority_floor > 0.0 && self.priority_floor <= 1.0) {
            return Err(Error::config("priority_floor", "must lie in (0, 1]"));
        }
        if self.eval_points == 0 {
            return Err(Error::config("eval_points", "must be at least 1"));
        }
        Ok(())
    }

    pub fn validate_for(&self, n_train: usize) -> Result<()> {
        self.validate()?;
        if self.replay_steps > 0 && self.buffer_capacity(n_train) == 0 {
            return Err(Error::config(
                "storage_fraction",
                format!(
                    "{} of {n_train} examples rounds to an empty buffer but replay_steps = {}",
                    self.storage_fraction, self.replay_steps
                ),
            ));
        }
        Ok(())
    }
}

/// Alters examples before they are trained on; applied to replayed examples.
pub trait ExampleTransform {
    fn apply(&self, example: Example, rng: &mut Rng) -> Example;
}

/// Leaves examples as they are.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoTransform;

impl ExampleTransform for NoTransform {
    fn apply(&self, example: Example, _rng: &mut Rng) -> Example {
        example
    }
}

impl<F: Fn(Example, &mut Rng) -> Example> ExampleTransform for F {
    fn apply(&self, example: Example, rng: &mut Rng) -> Example {
        self(example, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Epr,
    Naive,
    MultiEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryPoint {
    /// Global gradient step count at the checkpoint.
    pub step: u64,
    pub accuracy: f64,
    pub lr: f64,
    pub alpha: f64,
    /// Mean stored priority of the examples replayed since the previous
    /// checkpoint; 0 when nothing was replayed.
    pub mean_priority: f64,
    pub buffer_fill: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    /// Hash of the configuration that produced the run, filled in by callers
    /// that have one.
    #[serde(default)]
    pub config_hash: String,
    pub seed: u64,
    pub order_seed: u64,
    pub replay_steps: usize,
    pub storage_fraction: f64,
    pub buffer_capacity: usize,
    pub effective_epochs: u32,
    pub n_train: usize,
    pub batch_size: usize,
    pub steps_per_epoch: u64,
    pub top1_accuracy: f64,
    pub storage_metric: f64,
    /// Gradient steps actually taken over those of the baseline schedule.
    pub compute_metric: f64,
    /// `effective_epochs / baseline_epochs`, ignoring warm-up skips.
    pub planned_compute_metric: f64,
    pub gradient_steps: u64,
    pub replay_batches: u64,
    pub skipped_replay_batches: u64,
    pub telemetry: Vec<TelemetryPoint>,
}

impl RunReport {
    /// Telemetry as CSV with columns
    /// `step,accuracy,lr,alpha,mean_priority,buffer_fill`.
    pub fn telemetry_csv(&self) -> String {
        let mut out = String::from("step,accuracy,lr,alpha,mean_priority,buffer_fill\n");
        for p in &self.telemetry {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.step, p.accuracy, p.lr, p.alpha, p.mean_priority, p.buffer_fill
            ));
        }
        out
    }
}

/// Nominal `(storage, compute)` metrics for a replay configuration:
/// `capacity / N` and `(k + 1) / baseline_epochs`.
pub fn compute_metrics(
    replay_steps: usize,
    n_train: usize,
    batch_size: usize,
    buffer_capacity: usize,
    baseline_epochs: u32,
) -> (f64, f64) {
    debug_assert!(n_train > 0 && batch_size > 0 && baseline_epochs > 0);
    let storage = buffer_capacity as f64 / n_train as f64;
    let compute = (replay_steps + 1) as f64 / baseline_epochs as f64;
    (storage, compute)
}

/// Compute metric from an exact gradient-step count.
pub fn compute_metric_from_steps(
    gradient_steps: u64,
    n_train: usize,
    batch_size: usize,
    baseline_epochs: u32,
) -> f64 {
    let per_epoch = n_train.div_ceil(batch_size) as u64;
    gradient_steps as f64 / (baseline_epochs as u64 * per_epoch) as f64
}

fn checkpoint_due(batch_index: usize, n_batches: usize, points: usize) -> bool {
    (batch_index + 1) * points / n_batches > batch_index * points / n_batches
}

fn schedule(step: u64, t_max: u64) -> Result<ScheduleState> {
    ScheduleState::new(step.min(t_max), t_max)
}

fn check_dataset(dataset: &Dataset) -> Result<()> {
    if dataset.train.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    if dataset.test.is_empty() {
        return Err(Error::domain("test set is empty"));
    }
    Ok(())
}

/// Error-prioritized replay with the reference learner.
pub fn run_one_pass(
    config: &HarnessConfig,
    dataset: &Dataset,
    learner: &LearnerConfig,
    order_seed: u64,
) -> Result<RunReport> {
    learner.validate()?;
    let shape = learner.shape(dataset.feature_dim, dataset.n_classes);
    let mut model = LearnerParams::init(shape, derive_seed(config.seed, MODEL_STREAM));
    run_one_pass_with(config, dataset, &mut model, learner, order_seed, &NoTransform)
}

/// Error-prioritized replay driving any [`Learner`].
pub fn run_one_pass_with<L: Learner + ?Sized>(
    config: &HarnessConfig,
    dataset: &Dataset,
    model: &mut L,
    learner: &LearnerConfig,
    order_seed: u64,
    transform: &dyn ExampleTransform,
) -> Result<RunReport> {
    check_dataset(dataset)?;
    config.validate_for(dataset.train.len())?;
    learner.validate()?;

    let n = dataset.train.len();
    let b = learner.batch_size;
    let k = config.replay_steps;
    let steps_per_epoch = n.div_ceil(b) as u64;
    let t_max = (k as u64 + 1) * steps_per_epoch;
    let opt = learner.optimizer(t_max);
    let capacity = config.buffer_capacity(n);
    let floor = config.priority_floor;

    let mut buffer = if capacity > 0 {
        let cfg = BufferConfig {
            capacity,
            beta: config.beta,
            codec: config.codec,
        };
        Some(ReplayBuffer::new(cfg, dataset.feature_dim)?)
    } else {
        None
    };
    let warm = b.min(capacity.max(1));
    let mut buffer_rng = seeded_rng(derive_seed(config.seed, BUFFER_STREAM));
    let mut sampler_rng = seeded_rng(derive_seed(config.seed, SAMPLER_STREAM));
    let mut transform_rng = seeded_rng(derive_seed(config.seed, TRANSFORM_STREAM));
    let mut counter = SeenCounter::new();

    let mut step = 0u64;
    let mut replay_batches = 0u64;
    let mut skipped = 0u64;
    let mut priority_sum = 0.0;
    let mut priority_count = 0usize;
    let mut telemetry = Vec::new();

    let stream = one_pass_iter(&dataset.train, order_seed, b);
    let n_batches = stream.n_batches();
    for batch in stream {
        let incoming = WeightedBatch::incoming(batch.examples);
        model.grad_step(&incoming, cosine_lr(step, &opt)?, &opt)?;
        step += 1;

        if k > 0 {
            match buffer.as_mut() {
                Some(buf) if buf.len() >= warm => {
                    for _ in 0..k {
                        let slots = buf.sample(b, config.sampling, &mut sampler_rng)?;
                        let priorities: Vec<f64> = slots
                            .iter()
                            .map(|&s| buf.slots()[s].priority)
                            .collect();
                        priority_sum += priorities.iter().sum::<f64>();
                        priority_count += priorities.len();
                        let examples = slots
                            .iter()
                            .map(|&s| Ok(transform.apply(buf.read_slot(s)?, &mut transform_rng)))
                            .collect::<Result<Vec<_>>>()?;
                        let weights = if config.sampling == SamplingMode::Prioritized
                            && config.importance_weights
                        {
                            importance_weights(&priorities, floor)?
                        } else {
                            vec![1.0; examples.len()]
                        };
                        let replay = WeightedBatch::replay(examples, weights)?;
                        model.grad_step(&replay, cosine_lr(step, &opt)?, &opt)?;
                        step += 1;
                        replay_batches += 1;

                        if config.update_priorities_on_replay {
                            let alpha = alpha_schedule(&schedule(step, t_max)?, config.alpha_schedule);
                            for (&s, ex) in slots.iter().zip(&replay.examples) {
                                let loss = model.loss(&ex.features, ex.label)?;
                                buf.set_priority(s, priority(loss, alpha, floor)?)?;
                            }
                        }
                    }
                }
                _ => skipped += k as u64,
            }
        }

        let alpha = alpha_schedule(&schedule(step, t_max)?, config.alpha_schedule);
        for ex in &incoming.examples {
            counter.observe();
            if let Some(buf) = buffer.as_mut() {
                let loss = model.loss(&ex.features, ex.label)?;
                let p = priority(loss, alpha, floor)?;
                buf.try_insert(ex, p, &counter, step, &mut buffer_rng)?;
            }
        }

        if checkpoint_due(batch.step_index, n_batches, config.eval_points) {
            let mean_priority = if priority_count > 0 {
                priority_sum / priority_count as f64
            } else {
                0.0
            };
            priority_sum = 0.0;
            priority_count = 0;
            telemetry.push(TelemetryPoint {
                step,
                accuracy: evaluate(model, &dataset.test)?,
                lr: cosine_lr(step.min(t_max), &opt)?,
                alpha,
                mean_priority,
                buffer_fill: buffer.as_ref().map_or(0, |b| b.len()),
            });
        }
    }

    let (storage_metric, planned_compute_metric) =
        compute_metrics(k, n, b, capacity, config.baseline_epochs);
    Ok(RunReport {
        method: Method::Epr,
        config_hash: String::new(),
        seed: config.seed,
        order_seed,
        replay_steps: k,
        storage_fraction: config.storage_fraction,
        buffer_capacity: capacity,
        effective_epochs: k as u32 + 1,
        n_train: n,
        batch_size: b,
        steps_per_epoch,
        top1_accuracy: telemetry.last().map(|p| p.accuracy).unwrap_or(0.0),
        storage_metric,
        compute_metric: compute_metric_from_steps(step, n, b, config.baseline_epochs),
        planned_compute_metric,
        gradient_steps: step,
        replay_batches,
        skipped_replay_batches: skipped,
        telemetry,
    })
}

/// Plain shuffled multi-epoch training; epoch `e > 0` uses a fresh
/// permutation derived from `order_seed`, epoch 0 uses `order_seed` itself.
fn train_epochs<L: Learner + ?Sized>(
    epochs: u32,
    config: &HarnessConfig,
    dataset: &Dataset,
    model: &mut L,
    learner: &LearnerConfig,
    order_seed: u64,
) -> Result<(u64, Vec<TelemetryPoint>)> {
    let n = dataset.train.len();
    let b = learner.batch_size;
    let n_batches = n.div_ceil(b);
    let t_max = epochs as u64 * n_batches as u64;
    let opt: OptimizerConfig = learner.optimizer(t_max);
    let total_batches = epochs as usize * n_batches;
    let mut step = 0u64;
    let mut telemetry = Vec::new();
    for epoch in 0..epochs {
        let seed = if epoch == 0 {
            order_seed
        } else {
            derive_seed(order_seed, epoch as u64)
        };
        for batch in one_pass_iter(&dataset.train, seed, b) {
            let idx = epoch as usize * n_batches + batch.step_index;
            model.grad_step(&WeightedBatch::incoming(batch.examples), cosine_lr(step, &opt)?, &opt)?;
            step += 1;
            if checkpoint_due(idx, total_batches, config.eval_points) {
                telemetry.push(TelemetryPoint {
                    step,
                    accuracy: evaluate(model, &dataset.test)?,
                    lr: cosine_lr(step, &opt)?,
                    alpha: 0.0,
                    mean_priority: 0.0,
                    buffer_fill: 0,
                });
            }
        }
    }
    Ok((step, telemetry))
}

fn baseline_report(
    method: Method,
    epochs: u32,
    config: &HarnessConfig,
    dataset: &Dataset,
    learner: &LearnerConfig,
    order_seed: u64,
) -> Result<RunReport> {
    check_dataset(dataset)?;
    config.validate()?;
    learner.validate()?;
    if epochs == 0 {
        return Err(Error::config("epochs", "must be at least 1"));
    }
    let shape = learner.shape(dataset.feature_dim, dataset.n_classes);
    let mut model = LearnerParams::init(shape, derive_seed(config.seed, MODEL_STREAM));
    let (steps, telemetry) = train_epochs(epochs, config, dataset, &mut model, learner, order_seed)?;
    let n = dataset.train.len();
    let b = learner.batch_size;
    let (storage_fraction, storage_metric) = match method {
        Method::MultiEpoch => (1.0, 1.0),
        _ => (0.0, 0.0),
    };
    Ok(RunReport {
        method,
        config_hash: String::new(),
        seed: config.seed,
        order_seed,
        replay_steps: 0,
        storage_fraction,
        buffer_capacity: 0,
        effective_epochs: epochs,
        n_train: n,
        batch_size: b,
        steps_per_epoch: n.div_ceil(b) as u64,
        top1_accuracy: telemetry.last().map(|p| p.accuracy).unwrap_or(0.0),
        storage_metric,
        compute_metric: compute_metric_from_steps(steps, n, b, config.baseline_epochs),
        planned_compute_metric: epochs as f64 / config.baseline_epochs as f64,
        gradient_steps: steps,
        replay_batches: 0,
        skipped_replay_batches: 0,
        telemetry,
    })
}

/// A single pass, no memory, no replay.
///
/// Only `seed`, `baseline_epochs` and `eval_points` of `config` are used.
pub fn run_naive(
    config: &HarnessConfig,
    dataset: &Dataset,
    learner: &LearnerConfig,
    order_seed: u64,
) -> Result<RunReport> {
    baseline_report(Method::Naive, 1, config, dataset, learner, order_seed)
}

/// `epochs` shuffled passes over the full training set with cosine decay
/// across all of them.
pub fn run_multi_epoch(
    epochs: u32,
    config: &HarnessConfig,
    dataset: &Dataset,
    learner: &LearnerConfig,
    order_seed: u64,
) -> Result<RunReport> {
    baseline_report(Method::MultiEpoch, epochs, config, dataset, learner, order_seed)
}
