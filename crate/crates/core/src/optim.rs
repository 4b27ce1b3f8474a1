//! DP-SGD building blocks: per-sample clipping, Gaussian noising of the
//! clipped sum, and SGD / Adam parameter updates.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::nn::{Network, PerSampleGrads};
use crate::rng::{self, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("clip norm must be positive, got {0}")]
    ClipNorm(f64),
    #[error("noise multiplier must be finite and >= 0, got {0}")]
    NoiseMultiplier(f64),
    #[error("learning rate must be finite and > 0, got {0}")]
    LearningRate(f64),
    #[error("update has {actual} entries, network has {expected} parameters")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("cannot aggregate an empty batch")]
    EmptyBatch,
}

/// Maximum per-sample L2 norm. `f64::INFINITY` disables clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec(f64);

impl ClipSpec {
    pub fn new(norm: f64) -> Result<Self, OptimError> {
        if norm > 0.0 {
            Ok(Self(norm))
        } else {
            Err(OptimError::ClipNorm(norm))
        }
    }

    pub fn unbounded() -> Self {
        Self(f64::INFINITY)
    }

    pub fn norm(self) -> f64 {
        self.0
    }
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self(1.0)
    }
}

impl Serialize for ClipSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        crate::serde_ext::f64_or_inf::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for ClipSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = crate::serde_ext::f64_or_inf::deserialize(d)?;
        Self::new(v).map_err(serde::de::Error::custom)
    }
}

/// Noise multiplier and the key of the generator used for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
    pub step: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64, step: u64) -> Result<Self, OptimError> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(OptimError::NoiseMultiplier(sigma));
        }
        Ok(Self { sigma, seed, step })
    }

    pub fn disabled() -> Self {
        Self { sigma: 0.0, seed: 0, step: 0 }
    }
}

/// Scale every row to norm at most `C`: `row · min(1, C / ‖row‖)`.
/// Rows already within the bound are left untouched, which makes clipping
/// idempotent bit-for-bit.
pub fn clip_per_sample(grads: &PerSampleGrads, clip: ClipSpec) -> PerSampleGrads {
    let mut out = grads.clone();
    clip_in_place(&mut out, clip);
    out
}

pub fn clip_in_place(grads: &mut PerSampleGrads, clip: ClipSpec) {
    if clip.0.is_infinite() {
        return;
    }
    for i in 0..grads.batch_size() {
        let norm = grads.row_norm(i);
        if norm > clip.0 {
            let orig = grads.row(i).to_vec();
            let mut scale = clip.0 / norm;
            // Rounding can leave the scaled norm a few ulps above C, which
            // would make a second clip move the row again. Shrink the scale
            // until the bound holds exactly.
            loop {
                grads.row_mut(i).iter_mut().zip(&orig).for_each(|(v, o)| *v = o * scale);
                if grads.row_norm(i) <= clip.0 {
                    break;
                }
                scale = scale.next_down();
            }
        }
    }
}

/// `Σ rows + N(0, σ²C²·I)`, with draws from the stream `(seed, noise, step)`.
/// With an unbounded clip the noise scale is `σ` itself.
pub fn noisy_sum(clipped: &PerSampleGrads, clip: ClipSpec, noise: NoiseSpec) -> Vec<f64> {
    let mut sum = clipped.sum();
    if noise.sigma > 0.0 {
        let std = noise.sigma * if clip.0.is_finite() { clip.0 } else { 1.0 };
        let mut rng = rng::keyed(noise.seed, Stream::Noise, noise.step);
        for v in &mut sum {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += std * z;
        }
    }
    sum
}

/// `(1/B)·(Σ rows + N(0, σ²C²·I))`.
pub fn noisy_aggregate(clipped: &PerSampleGrads, clip: ClipSpec, noise: NoiseSpec) -> Result<Vec<f64>, OptimError> {
    let b = clipped.batch_size();
    if b == 0 {
        return Err(OptimError::EmptyBatch);
    }
    let inv = 1.0 / b as f64;
    Ok(noisy_sum(clipped, clip, noise).into_iter().map(|v| v * inv).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Learning rate plus, for Adam, the moment estimates and timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    min_lr: f64,
    adam: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, min_lr: f64) -> Result<Self, OptimError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(OptimError::LearningRate(lr));
        }
        Ok(Self { kind, lr, min_lr: min_lr.min(lr), adam: AdamParams::default(), m: Vec::new(), v: Vec::new(), t: 0 })
    }

    pub fn sgd(lr: f64) -> Result<Self, OptimError> {
        Self::new(OptimizerKind::Sgd, lr, 0.0)
    }

    pub fn adam(lr: f64) -> Result<Self, OptimError> {
        Self::new(OptimizerKind::Adam, lr, 0.0)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    /// Multiply the learning rate by `factor`, never going below the floor.
    pub fn decay(&mut self, factor: f64) {
        self.lr = (self.lr * factor).max(self.min_lr);
    }

    /// Apply one update. SGD: `θ ← θ − α·g`. Adam: bias-corrected moments of
    /// `g`, `θ ← θ − α·m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, net: &mut Network, update: &[f64]) -> Result<(), OptimError> {
        let n = net.param_count();
        if update.len() != n {
            return Err(OptimError::LengthMismatch { expected: n, actual: update.len() });
        }
        self.t += 1;
        let params = net.parameters_mut();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(update) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != n {
                    self.m = vec![0.0; n];
                    self.v = vec![0.0; n];
                }
                let AdamParams { beta1, beta2, eps } = self.adam;
                let c1 = 1.0 - beta1.powf(self.t as f64);
                let c2 = 1.0 - beta2.powf(self.t as f64);
                for i in 0..n {
                    let g = update[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
