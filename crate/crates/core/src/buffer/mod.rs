//! Bounded replay memory filled by freshness-biased reservoir sampling.
//!
//! The `n`-th example of the stream enters with probability
//! `min(1, beta * m / n)`. While free slots remain it takes the next one;
//! afterwards it replaces a uniformly chosen occupied slot. `beta > 1` tilts
//! the reservoir toward recent examples.

mod codec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priority::{SamplingMode, SumTree};
use crate::stream::Example;
use crate::Rng;

pub use codec::{CodecKind, IdentityCodec, PayloadCodec, Quant8Codec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferConfig {
    /// Number of slots, `m`.
    pub capacity: usize,
    /// Freshness factor applied to the reservoir inclusion probability.
    pub beta: f64,
    pub codec: CodecKind,
}

impl BufferConfig {
    pub fn new(capacity: usize, beta: f64) -> Self {
        Self {
            capacity,
            beta,
            codec: CodecKind::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::config("capacity", "must be at least 1"));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::config("beta", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// One resident example.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferSlot {
    pub payload: Vec<u8>,
    pub label: u32,
    pub priority: f64,
    /// Global step at which the example was inserted.
    pub insert_step: u64,
}

/// Number of stream examples observed so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeenCounter {
    n_seen: u64,
}

impl SeenCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one more example and returns the new count.
    pub fn observe(&mut self) -> u64 {
        self.n_seen += 1;
        self.n_seen
    }

    pub fn get(&self) -> u64 {
        self.n_seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted { slot: usize, evicted: bool },
    Skipped,
}

/// `min(1, beta * m / n)`.
pub fn inclusion_probability(n_seen: u64, config: &BufferConfig) -> Result<f64> {
    if n_seen == 0 {
        return Err(Error::domain("inclusion probability undefined before any example is seen"));
    }
    Ok((config.beta * config.capacity as f64 / n_seen as f64).min(1.0))
}

#[derive(Debug)]
pub struct ReplayBuffer {
    config: BufferConfig,
    feature_dim: usize,
    codec: Box<dyn PayloadCodec>,
    slots: Vec<BufferSlot>,
    tree: SumTree,
}

impl ReplayBuffer {
    pub fn new(config: BufferConfig, feature_dim: usize) -> Result<Self> {
        let codec = config.codec.build();
        Self::with_codec(config, feature_dim, codec)
    }

    /// Buffer with a caller-supplied codec in place of the built-in ones.
    pub fn with_codec(
        config: BufferConfig,
        feature_dim: usize,
        codec: Box<dyn PayloadCodec>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            feature_dim,
            codec,
            slots: Vec::with_capacity(config.capacity),
            tree: SumTree::new(config.capacity),
        })
    }

    pub fn config(&self) -> &BufferConfig {
        &self.config
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    /// Occupied slots. Slots fill in index order and are never vacated.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() == self.config.capacity
    }

    pub fn slot(&self, slot: usize) -> Option<&BufferSlot> {
        self.slots.get(slot)
    }

    pub fn slots(&self) -> &[BufferSlot] {
        &self.slots
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn payload_bytes(&self) -> usize {
        self.slots.iter().map(|s| s.payload.len()).sum()
    }

    /// Mean stored priority over occupied slots, 0 when empty.
    pub fn mean_priority(&self) -> f64 {
        if self.slots.is_empty() {
            0.0
        } else {
            self.tree.total() / self.slots.len() as f64
        }
    }

    /// Offers the `counter.get()`-th stream example to the reservoir.
    ///
    /// `counter` must already count this example. On [`InsertOutcome::Skipped`]
    /// or on a codec error the buffer is left untouched.
    pub fn try_insert(
        &mut self,
        example: &Example,
        priority: f64,
        counter: &SeenCounter,
        step: u64,
        rng: &mut Rng,
    ) -> Result<InsertOutcome> {
        if !(priority > 0.0 && priority <= 1.0) {
            return Err(Error::domain(format!("priority must lie in (0, 1], got {priority}")));
        }
        if example.features.len() != self.feature_dim {
            return Err(Error::Shape {
                expected: self.feature_dim,
                got: example.features.len(),
            });
        }
        let p = inclusion_probability(counter.get(), &self.config)?;
        if p < 1.0 && rng.random::<f64>() >= p {
            return Ok(InsertOutcome::Skipped);
        }
        let payload = self.codec.encode(&example.features)?;
        let new = BufferSlot {
            payload,
            label: example.label,
            priority,
            insert_step: step,
        };
        let (slot, evicted) = if self.is_full() {
            let victim = rng.random_range(0..self.config.capacity);
            self.slots[victim] = new;
            (victim, true)
        } else {
            self.slots.push(new);
            (self.slots.len() - 1, false)
        };
        self.tree.update(slot, priority)?;
        Ok(InsertOutcome::Inserted { slot, evicted })
    }

    /// Decodes the example held in `slot`.
    pub fn read_slot(&self, slot: usize) -> Result<Example> {
        let s = self.slots.get(slot).ok_or(Error::Index {
            index: slot,
            len: self.slots.len(),
        })?;
        let features = self.codec.decode(&s.payload, self.feature_dim)?;
        Ok(Example::new(features, s.label))
    }

    /// Overwrites the priority of an occupied slot.
    pub fn set_priority(&mut self, slot: usize, priority: f64) -> Result<()> {
        if !(priority > 0.0 && priority <= 1.0) {
            return Err(Error::domain(format!("priority must lie in (0, 1], got {priority}")));
        }
        let len = self.slots.len();
        let s = self
            .slots
            .get_mut(slot)
            .ok_or(Error::Index { index: slot, len })?;
        s.priority = priority;
        self.tree.update(slot, priority)
    }

    /// Draws `count` occupied slots with replacement.
    pub fn sample(&self, count: usize, mode: SamplingMode, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.slots.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        match mode {
            SamplingMode::Prioritized => self.tree.sample(count, rng),
            SamplingMode::Uniform => Ok((0..count)
                .map(|_| rng.random_range(0..self.slots.len()))
                .collect()),
        }
    }
}
