use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Learner, OptimizerConfig};
use crate::error::{Error, Result};
use crate::priority::WeightedBatch;
use crate::seeded_rng;

/// Dimensions of the reference network. `hidden_dim == 0` is the linear model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
}

impl LayerShape {
    pub fn linear(input_dim: usize, n_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 0,
            n_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, n_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            n_classes,
        }
    }

    /// Width of the layer feeding the output layer.
    fn penultimate(&self) -> usize {
        if self.hidden_dim == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    fn hidden_params(&self) -> usize {
        self.hidden_dim * self.input_dim + self.hidden_dim
    }

    pub fn n_params(&self) -> usize {
        self.hidden_params() + self.n_classes * self.penultimate() + self.n_classes
    }
}

/// Flat parameter vector plus the optimizer's momentum buffer.
///
/// Layout, all matrices row-major: `[W1 (H×D), b1 (H), W2 (C×H'), b2 (C)]`
/// where `H' = H`, or `H' = D` with the hidden block absent when `H = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams {
    pub shape: LayerShape,
    pub theta: Vec<f64>,
    pub momentum: Vec<f64>,
}

/// Forward-pass intermediates for one example.
struct Forward {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl LearnerParams {
    pub fn zeros(shape: LayerShape) -> Self {
        let n = shape.n_params();
        Self {
            shape,
            theta: vec![0.0; n],
            momentum: vec![0.0; n],
        }
    }

    /// Zeros for the linear model; `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for
    /// every MLP weight and bias.
    pub fn init(shape: LayerShape, seed: u64) -> Self {
        let mut params = Self::zeros(shape);
        if shape.hidden_dim == 0 {
            return params;
        }
        let mut rng = seeded_rng(seed);
        let split = shape.hidden_params();
        let b1 = 1.0 / (shape.input_dim as f64).sqrt();
        let b2 = 1.0 / (shape.hidden_dim as f64).sqrt();
        for (i, t) in params.theta.iter_mut().enumerate() {
            let bound = if i < split { b1 } else { b2 };
            *t = rng.random_range(-bound..=bound);
        }
        params
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.shape.input_dim {
            return Err(Error::Shape {
                expected: self.shape.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Raw output-layer scores.
    pub fn logits(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_logits(x).1)
    }

    fn forward_logits(&self, x: &[f32]) -> (Vec<f64>, Vec<f64>) {
        let LayerShape {
            input_dim: d,
            hidden_dim: h,
            n_classes: c,
        } = self.shape;
        let hidden: Vec<f64> = if h == 0 {
            x.iter().map(|&v| v as f64).collect()
        } else {
            let (w1, b1) = self.theta[..h * d + h].split_at(h * d);
            (0..h)
                .map(|j| {
                    let row = &w1[j * d..(j + 1) * d];
                    let z: f64 = row.iter().zip(x).map(|(w, &v)| w * v as f64).sum();
                    (z + b1[j]).tanh()
                })
                .collect()
        };
        let hp = hidden.len();
        let out = &self.theta[self.shape.hidden_params()..];
        let (w2, b2) = out.split_at(c * hp);
        let logits = (0..c)
            .map(|k| {
                let row = &w2[k * hp..(k + 1) * hp];
                row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>() + b2[k]
            })
            .collect();
        (hidden, logits)
    }

    fn forward(&self, x: &[f32]) -> Forward {
        let (hidden, mut probs) = self.forward_logits(x);
        softmax_in_place(&mut probs);
        Forward { hidden, probs }
    }

    /// Weighted mean cross-entropy of `batch` and its gradient.
    ///
    /// The gradient is that of `(1/|B|) sum_i w_i * -log f_{y_i}(x_i)` without
    /// the probability clamp.
    pub fn loss_and_gradient(&self, batch: &WeightedBatch) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        if batch.weights.len() != batch.len() {
            return Err(Error::Shape {
                expected: batch.len(),
                got: batch.weights.len(),
            });
        }
        let LayerShape {
            input_dim: d,
            hidden_dim: h,
            n_classes: c,
        } = self.shape;
        let hp = self.shape.penultimate();
        let off2 = self.shape.hidden_params();
        let mut grad = vec![0.0; self.theta.len()];
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        let mut dlogits = vec![0.0; c];
        let mut dhidden = vec![0.0; hp];

        for (ex, &w) in batch.examples.iter().zip(&batch.weights) {
            self.check_input(&ex.features)?;
            let y = ex.label as usize;
            if y >= c {
                return Err(Error::domain(format!("label {y} out of range for {c} classes")));
            }
            let fwd = self.forward(&ex.features);
            total += w * -fwd.probs[y].clamp(super::PROB_CLAMP, 1.0 - super::PROB_CLAMP).ln();
            let coef = w * scale;
            for (k, (d, &p)) in dlogits.iter_mut().zip(&fwd.probs).enumerate() {
                let onehot = if k == y { 1.0 } else { 0.0 };
                *d = coef * (p - onehot);
            }
            // output layer
            {
                let (gw2, gb2) = grad[off2..].split_at_mut(c * hp);
                for k in 0..c {
                    let g = dlogits[k];
                    let row = &mut gw2[k * hp..(k + 1) * hp];
                    for (gw, a) in row.iter_mut().zip(&fwd.hidden) {
                        *gw += g * a;
                    }
                    gb2[k] += g;
                }
            }
            if h == 0 {
                continue;
            }
            // back through tanh
            let w2 = &self.theta[off2..off2 + c * hp];
            dhidden.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..c {
                let g = dlogits[k];
                for (dh, w) in dhidden.iter_mut().zip(&w2[k * hp..(k + 1) * hp]) {
                    *dh += g * w;
                }
            }
            let (gw1, gb1) = grad[..off2].split_at_mut(h * d);
            for j in 0..h {
                let a = fwd.hidden[j];
                let dz = dhidden[j] * (1.0 - a * a);
                let row = &mut gw1[j * d..(j + 1) * d];
                for (gw, &xv) in row.iter_mut().zip(&ex.features) {
                    *gw += dz * xv as f64;
                }
                gb1[j] += dz;
            }
        }
        Ok((total * scale, grad))
    }

    /// Nesterov momentum step: `v <- mu v + g`, `theta <- theta - lr (g + mu v)`.
    pub fn apply_gradient(&mut self, grad: &[f64], lr: f64, momentum: f64) -> Result<()> {
        if grad.len() != self.theta.len() {
            return Err(Error::Shape {
                expected: self.theta.len(),
                got: grad.len(),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient {} at parameter {i} of {} (lr {lr})",
                grad[i],
                grad.len()
            )));
        }
        for ((t, v), &g) in self.theta.iter_mut().zip(&mut self.momentum).zip(grad) {
            *v = momentum * *v + g;
            *t -= lr * (g + momentum * *v);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.momentum).all(|v| v.is_finite())
    }
}

impl Learner for LearnerParams {
    fn n_classes(&self) -> usize {
        self.shape.n_classes
    }

    fn predict(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward(x).probs)
    }

    fn grad_step(&mut self, batch: &WeightedBatch, lr: f64, config: &OptimizerConfig) -> Result<()> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::domain(format!("learning rate must be >= 0, got {lr}")));
        }
        let (_, grad) = self.loss_and_gradient(batch)?;
        self.apply_gradient(&grad, lr, config.momentum)
    }
}
