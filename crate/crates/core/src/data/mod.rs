//! Dataset ingestion and preprocessing: undersampling, class weights,
//! stratified splitting, normalization, channel expansion, augmentation.

mod augment;
mod io;
mod synthetic;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{self, Stream};
use crate::tensor::Tensor;

pub use augment::{augment, AugmentConfig};
pub use io::{load_idx, load_raw, write_idx, write_raw, RAW_MAGIC};
pub use synthetic::synthetic_blobs;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad magic {found:#010x} in {path} (expected {expected:#010x})")]
    BadMagic { path: String, found: u32, expected: u32 },
    #[error("truncated file {path}: needed {needed} bytes, found {found}")]
    Truncated { path: String, needed: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("class {class} has no samples")]
    EmptyClass { class: usize },
    #[error("undersampling infeasible: class {class} has {available} samples, {needed} requested")]
    InfeasibleRatio { class: usize, available: usize, needed: usize },
    #[error("invalid split fractions {0:?}")]
    BadFractions([f64; 3]),
    #[error("{split} split gets {size} samples, fewer than the {classes} classes it must stratify")]
    SplitTooSmall { split: &'static str, size: usize, classes: usize },
    #[error("pixel value {0} outside [0, 255]")]
    PixelRange(f64),
    #[error("input looks already normalized (max {max} <= 1 with fractional values)")]
    AlreadyNormalized { max: f64 },
    #[error("expected {expected} channels, found {found}")]
    Channels { expected: usize, found: usize },
}

/// Images `(N, H, W, C)` with one class id per image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self, DataError> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(DataError::Invalid(format!("images must be (N, H, W, C), got {shape:?}")));
        }
        if !(shape[3] == 1 || shape[3] == 3) {
            return Err(DataError::Invalid(format!("channel count must be 1 or 3, got {}", shape[3])));
        }
        if shape[0] != labels.len() {
            return Err(DataError::CountMismatch { images: shape[0], labels: labels.len() });
        }
        if class_names.is_empty() {
            return Err(DataError::Invalid("no classes".into()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(DataError::LabelOutOfRange { label, classes: class_names.len() });
        }
        Ok(Self { images, labels, class_names })
    }

    /// Class names `"0"`, `"1"`, … for `k` classes.
    pub fn numbered_classes(k: usize) -> Vec<String> {
        (0..k).map(|c| c.to_string()).collect()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[H, W, C]`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Samples at `indices`, in that order. Panics on an out-of-range index
    /// or an empty selection.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        assert!(!indices.is_empty(), "empty subset");
        LabeledDataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Same labels, replaced image tensor (same sample count).
    pub fn with_images(&self, images: Tensor) -> Result<LabeledDataset, DataError> {
        LabeledDataset::new(images, self.labels.clone(), self.class_names.clone())
    }

    /// First `n` samples (or all if fewer).
    pub fn take(&self, n: usize) -> LabeledDataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Content hash of sample `i` (SHA-256 over the pixel values' bytes).
    pub fn sample_hash(&self, i: usize) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in self.images.row(i) {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    /// Drop exact-duplicate images, keeping the first occurrence. Returns the
    /// deduplicated dataset and the number of removed samples.
    pub fn dedup(&self) -> (LabeledDataset, usize) {
        let mut seen = HashSet::new();
        let keep: Vec<usize> = (0..self.len()).filter(|&i| seen.insert(self.sample_hash(i))).collect();
        let removed = self.len() - keep.len();
        (self.subset(&keep), removed)
    }

    /// Keep every sample of `minority` and `floor(ratio · n_minority)`
    /// uniformly drawn samples of each other class.
    pub fn undersample(&self, minority: usize, ratio: f64, seed: u64) -> Result<LabeledDataset, DataError> {
        let counts = self.counts();
        if minority >= counts.len() {
            return Err(DataError::LabelOutOfRange { label: minority, classes: counts.len() });
        }
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(DataError::Invalid(format!("undersampling ratio {ratio} must be positive")));
        }
        let target = (ratio * counts[minority] as f64 + 1e-9).floor() as usize;
        let mut keep = Vec::with_capacity(self.len());
        for class in 0..counts.len() {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
            if class != minority {
                if idx.len() < target {
                    return Err(DataError::InfeasibleRatio { class, available: idx.len(), needed: target });
                }
                idx.shuffle(&mut rng::keyed(seed, Stream::Undersample, class as u64));
                idx.truncate(target);
            }
            keep.extend(idx);
        }
        keep.sort_unstable();
        Ok(self.subset(&keep))
    }

    /// `w_c = N / (k · n_c)`.
    pub fn class_weights(&self) -> Result<ClassWeights, DataError> {
        compute_class_weights(&self.counts())
    }

    /// Stratified train/validation/test split.
    pub fn split(&self, spec: &SplitSpec) -> Result<Split, DataError> {
        let idx = split_indices(&self.labels, self.num_classes(), spec)?;
        let pick = |v: &[usize]| if v.is_empty() { None } else { Some(self.subset(v)) };
        Ok(Split {
            train: pick(&idx.train).expect("train split is never empty"),
            validation: pick(&idx.validation),
            test: pick(&idx.test),
            indices: idx,
        })
    }

    /// Pixel values scaled by 1/255.
    pub fn normalized(&self) -> Result<LabeledDataset, DataError> {
        self.with_images(normalize(&self.images)?)
    }

    pub fn to_rgb(&self) -> Result<LabeledDataset, DataError> {
        self.with_images(grayscale_to_rgb(&self.images)?)
    }
}

/// Per-class loss multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, DataError> {
        if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(DataError::Invalid(format!("class weights must be positive and finite: {weights:?}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0; k])
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `w_c = N / (k · n_c)` from per-class counts.
pub fn compute_class_weights(counts: &[usize]) -> Result<ClassWeights, DataError> {
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(DataError::EmptyClass { class });
    }
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    ClassWeights::new(counts.iter().map(|&c| n as f64 / (k * c as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// (train, validation, test).
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64, seed: u64) -> Self {
        Self { fractions: [train, validation, test], seed }
    }

    /// Split sizes for `n` samples: floors first, then the remaining samples
    /// go to the splits with the largest fractional parts (ties to the
    /// earlier split).
    pub fn sizes(&self, n: usize) -> Result<[usize; 3], DataError> {
        let f = self.fractions;
        let valid =
            f.iter().all(|x| x.is_finite() && *x >= 0.0) && f[0] > 0.0 && (f.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if !valid {
            return Err(DataError::BadFractions(f));
        }
        let exact: Vec<f64> = f.iter().map(|x| x * n as f64).collect();
        let mut sizes = [0usize; 3];
        for i in 0..3 {
            sizes[i] = (exact[i] + 1e-9).floor() as usize;
        }
        let mut rest = n - sizes.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = exact[a] - sizes[a] as f64;
            let fb = exact[b] - sizes[b] as f64;
            fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            if f[i] > 0.0 {
                sizes[i] += 1;
                rest -= 1;
            }
        }
        Ok(sizes)
    }
}

/// Original indices assigned to each split, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: LabeledDataset,
    pub validation: Option<LabeledDataset>,
    pub test: Option<LabeledDataset>,
    pub indices: SplitIndices,
}

/// Stratified split of sample indices.
///
/// Every class contributes `n_c · G_s / N` samples to split `s` (rounded down
/// or up), while split totals `G_s` follow [`SplitSpec::sizes`] exactly.
pub fn split_indices(labels: &[usize], num_classes: usize, spec: &SplitSpec) -> Result<SplitIndices, DataError> {
    const NAMES: [&str; 3] = ["train", "validation", "test"];
    let n = labels.len();
    let totals = spec.sizes(n)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let present = by_class.iter().filter(|v| !v.is_empty()).count();
    for s in 0..3 {
        if spec.fractions[s] > 0.0 && totals[s] < present {
            return Err(DataError::SplitTooSmall { split: NAMES[s], size: totals[s], classes: present });
        }
    }

    // Controlled rounding of the matrix n_c * G_s / N: start from floors, then
    // hand out each class's leftover units to the splits with the largest
    // remaining column deficit, preferring cells with a fractional part.
    let mut alloc = vec![[0usize; 3]; num_classes];
    let mut frac = vec![[0f64; 3]; num_classes];
    for c in 0..num_classes {
        for s in 0..3 {
            let e = by_class[c].len() as f64 * totals[s] as f64 / n as f64;
            alloc[c][s] = (e + 1e-9).floor() as usize;
            frac[c][s] = e - alloc[c][s] as f64;
        }
    }
    let mut col_deficit: [isize; 3] =
        std::array::from_fn(|s| totals[s] as isize - alloc.iter().map(|a| a[s] as isize).sum::<isize>());
    let mut rows: Vec<usize> = (0..num_classes).collect();
    // Larger leftovers first keeps the greedy assignment feasible.
    rows.sort_by_key(|&c| std::cmp::Reverse(by_class[c].len() - alloc[c].iter().sum::<usize>()));
    for c in rows {
        let mut left = by_class[c].len() - alloc[c].iter().sum::<usize>();
        while left > 0 {
            let pick = (0..3)
                .filter(|&s| spec.fractions[s] > 0.0)
                .max_by(|&a, &b| {
                    let ka = (col_deficit[a] > 0, frac[c][a] > 1e-9, col_deficit[a]);
                    let kb = (col_deficit[b] > 0, frac[c][b] > 1e-9, col_deficit[b]);
                    ka.cmp(&kb).then(b.cmp(&a))
                })
                .expect("train fraction is positive");
            alloc[c][pick] += 1;
            frac[c][pick] = 0.0;
            col_deficit[pick] -= 1;
            left -= 1;
        }
    }

    let mut out: [Vec<usize>; 3] = Default::default();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        idx.shuffle(&mut rng::keyed(spec.seed, Stream::Split, c as u64));
        let mut start = 0;
        for s in 0..3 {
            out[s].extend_from_slice(&idx[start..start + alloc[c][s]]);
            start += alloc[c][s];
        }
    }
    for v in out.iter_mut() {
        v.sort_unstable();
    }
    let [train, validation, test] = out;
    Ok(SplitIndices { train, validation, test })
}

/// Scale pixel values from `[0, 255]` into `[0, 1]`.
///
/// Refuses input that already looks normalized (maximum ≤ 1 together with
/// fractional values), since scaling twice silently destroys the signal.
pub fn normalize(images: &Tensor) -> Result<Tensor, DataError> {
    if let Some(&v) = images.data().iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(DataError::PixelRange(v));
    }
    let max = images.max();
    if max <= 1.0 && images.data().iter().any(|v| v.fract() != 0.0) {
        return Err(DataError::AlreadyNormalized { max });
    }
    Ok(images.map(|v| v / 255.0).expect("finite"))
}

/// Replicate the single channel of `(N, H, W, 1)` images three times.
pub fn grayscale_to_rgb(images: &Tensor) -> Result<Tensor, DataError> {
    let shape = images.shape();
    if shape.len() != 4 || shape[3] != 1 {
        return Err(DataError::Channels { expected: 1, found: shape.last().copied().unwrap_or(0) });
    }
    let data: Vec<f64> = images.data().iter().flat_map(|&v| [v, v, v]).collect();
    Ok(Tensor::from_parts_unchecked(vec![shape[0], shape[1], shape[2], 3], data))
}
