//! Minimal f64 network engine with exact per-sample gradients.

mod kernels;
mod layer;
mod loss;
mod network;

use thiserror::Error;

pub use layer::{Activation, LayerSpec, NetworkSpec, PoolMode};
pub use loss::{labels_from_one_hot, log_sum_exp, softmax, weighted_cross_entropy, LossOutput};
pub use network::{build_network, ForwardCache, Network, NetworkSnapshot};

/// Number of values per sample the layer stack produces, without building
/// parameters. Lets callers size a dense head after a convolutional body.
pub fn output_len(spec: &NetworkSpec) -> Result<usize, NnError> {
    Ok(layer::resolve(spec)?.num_outputs())
}

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch between {upstream} and {downstream}")]
    ShapeMismatch { layer: usize, upstream: String, downstream: String },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("batch shape {actual:?} does not match input shape {expected:?}")]
    InputShape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("forward cache mismatch: {0}")]
    CacheMismatch(String),
    #[error("expected {expected} parameters, got {actual}")]
    ParamLength { expected: usize, actual: usize },
    #[error("{logits} logit rows but {labels} labels")]
    LabelCount { logits: usize, labels: usize },
    #[error("{weights} class weights for {classes} classes")]
    WeightCount { classes: usize, weights: usize },
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

/// One flat gradient row per sample, each of length `dim` (the network's
/// parameter count). Row `i` depends only on sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleGrads {
    batch: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PerSampleGrads {
    pub fn zeros(batch: usize, dim: usize) -> Self {
        Self { batch, dim, data: vec![0.0; batch * dim] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == dim), "ragged gradient rows");
        Self { batch: rows.len(), dim, data: rows.concat() }
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact on an empty dim would panic
        self.data.chunks_exact(self.dim.max(1)).take(self.batch)
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for r in self.rows() {
            s.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        s
    }

    pub fn mean(&self) -> Vec<f64> {
        let b = self.batch.max(1) as f64;
        self.sum().into_iter().map(|v| v / b).collect()
    }
}
