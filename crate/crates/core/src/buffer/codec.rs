use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encodes feature vectors into opaque byte payloads and back.
pub trait PayloadCodec: fmt::Debug + Send + Sync {
    fn id(&self) -> &'static str;
    fn encode(&self, features: &[f32]) -> Result<Vec<u8>>;
    fn decode(&self, payload: &[u8], feature_dim: usize) -> Result<Vec<f32>>;
}

/// Built-in codecs, selectable by name in configs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    #[default]
    Identity,
    Quant8,
}

impl CodecKind {
    pub fn build(self) -> Box<dyn PayloadCodec> {
        match self {
            CodecKind::Identity => Box::new(IdentityCodec),
            CodecKind::Quant8 => Box::new(Quant8Codec),
        }
    }
}

/// Raw little-endian `f32`s. Round trips are bit-exact.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCodec;

impl PayloadCodec for IdentityCodec {
    fn id(&self) -> &'static str {
        "identity"
    }

    fn encode(&self, features: &[f32]) -> Result<Vec<u8>> {
        Ok(features.iter().flat_map(|v| v.to_le_bytes()).collect())
    }

    fn decode(&self, payload: &[u8], feature_dim: usize) -> Result<Vec<f32>> {
        if payload.len() != 4 * feature_dim {
            return Err(Error::Codec(format!(
                "identity payload has {} bytes, expected {}",
                payload.len(),
                4 * feature_dim
            )));
        }
        Ok(payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Per-vector min/max affine quantization to one byte per feature.
///
/// Layout: `min f32 | max f32 | D × u8`. A decoded value lies within
/// [`Quant8Codec::tolerance`] of the original: half a quantization step,
/// `(max - min) / 510`, plus `f32` rounding slack.
#[derive(Debug, Clone, Copy, Default)]
pub struct Quant8Codec;

impl Quant8Codec {
    pub fn tolerance(features: &[f32]) -> f32 {
        let (lo, hi) = min_max(features);
        let span = hi - lo;
        span / 510.0 + (lo.abs().max(hi.abs()) + span) * 4.0 * f32::EPSILON
    }
}

fn min_max(features: &[f32]) -> (f32, f32) {
    features
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

impl PayloadCodec for Quant8Codec {
    fn id(&self) -> &'static str {
        "quant8"
    }

    fn encode(&self, features: &[f32]) -> Result<Vec<u8>> {
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Codec(format!("quant8 cannot encode non-finite value {v}")));
        }
        let (lo, hi) = if features.is_empty() {
            (0.0, 0.0)
        } else {
            min_max(features)
        };
        if !(hi - lo).is_finite() {
            return Err(Error::Codec("quant8 value range overflows f32".into()));
        }
        let scale = if hi > lo { 255.0 / (hi as f64 - lo as f64) } else { 0.0 };
        let mut out = Vec::with_capacity(8 + features.len());
        out.extend_from_slice(&lo.to_le_bytes());
        out.extend_from_slice(&hi.to_le_bytes());
        out.extend(
            features
                .iter()
                .map(|&v| ((v as f64 - lo as f64) * scale).round().clamp(0.0, 255.0) as u8),
        );
        Ok(out)
    }

    fn decode(&self, payload: &[u8], feature_dim: usize) -> Result<Vec<f32>> {
        if payload.len() != 8 + feature_dim {
            return Err(Error::Codec(format!(
                "quant8 payload has {} bytes, expected {}",
                payload.len(),
                8 + feature_dim
            )));
        }
        let lo = f32::from_le_bytes(payload[0..4].try_into().unwrap());
        let hi = f32::from_le_bytes(payload[4..8].try_into().unwrap());
        if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
            return Err(Error::Codec(format!("corrupt quant8 range [{lo}, {hi}]")));
        }
        let step = (hi as f64 - lo as f64) / 255.0;
        Ok(payload[8..]
            .iter()
            .map(|&q| (lo as f64 + q as f64 * step) as f32)
            .collect())
    }
}
