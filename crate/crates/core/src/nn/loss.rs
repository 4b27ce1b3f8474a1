use super::NnError;
use crate::data::ClassWeights;
use crate::tensor::Tensor;

/// Numerically stable `log Σ exp(row)`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Row-wise softmax of a `(B, k)` matrix.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.row_len();
    let mut out = Vec::with_capacity(logits.len());
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    Tensor::from_parts_unchecked(vec![logits.rows(), k], out)
}

/// Integer class ids from one-hot (or soft) label rows, by argmax.
pub fn labels_from_one_hot(one_hot: &Tensor) -> Vec<usize> {
    (0..one_hot.rows())
        .map(|i| {
            let row = one_hot.row(i);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

/// Result of [`weighted_cross_entropy`].
#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Mean over the batch of `w(y_i) · (−log softmax(z_i)[y_i])`.
    pub loss: f64,
    /// The individual weighted losses.
    pub per_sample: Vec<f64>,
    /// Row `i` is the derivative of sample `i`'s weighted loss with respect to
    /// its own logits, `w(y_i) · (softmax(z_i) − onehot(y_i))`. The gradient
    /// of the mean loss is this divided by the batch size.
    pub per_sample_dlogits: Tensor,
}

impl LossOutput {
    /// d(mean loss)/d(logits).
    pub fn mean_dlogits(&self) -> Tensor {
        let b = self.per_sample_dlogits.rows() as f64;
        self.per_sample_dlogits.map(|v| v / b).expect("finite gradient")
    }
}

pub fn weighted_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<LossOutput, NnError> {
    let k = logits.row_len();
    if logits.shape().len() != 2 || labels.len() != logits.rows() {
        return Err(NnError::LabelCount { logits: logits.rows(), labels: labels.len() });
    }
    if weights.len() != k {
        return Err(NnError::WeightCount { classes: k, weights: weights.len() });
    }
    let mut per_sample = Vec::with_capacity(labels.len());
    let mut grad = Vec::with_capacity(logits.len());
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(NnError::LabelOutOfRange { label: y, classes: k });
        }
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        let w = weights.get(y);
        per_sample.push(w * (lse - row[y]));
        grad.extend(row.iter().enumerate().map(|(j, &z)| {
            let p = (z - lse).exp();
            w * (p - if j == y { 1.0 } else { 0.0 })
        }));
    }
    let loss = per_sample.iter().sum::<f64>() / labels.len().max(1) as f64;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("loss"));
    }
    Ok(LossOutput { loss, per_sample, per_sample_dlogits: Tensor::from_parts_unchecked(logits.shape().to_vec(), grad) })
}
