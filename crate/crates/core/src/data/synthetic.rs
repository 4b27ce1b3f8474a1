use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::LabeledDataset;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// Byte-valued `(N, h, w, 1)` images with one Gaussian blob per class.
///
/// Class `c` puts its blob at a fixed position on a circle around the image
/// centre; every sample jitters the position by up to `jitter` pixels and adds
/// pixel noise with standard deviation `noise`. Samples are interleaved by
/// class (0, 1, …, k−1, 0, 1, …).
pub fn synthetic_blobs(counts: &[usize], h: usize, w: usize, jitter: f64, noise: f64, seed: u64) -> LabeledDataset {
    let k = counts.len();
    let mut rng = rng::keyed(seed, Stream::Synthetic, 0);
    let pixel_noise = Normal::new(0.0, noise.max(1e-12)).expect("valid std");
    let radius = 0.25 * h.min(w) as f64;
    let sigma = 0.12 * h.min(w) as f64;
    let mut remaining = counts.to_vec();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    while remaining.iter().any(|&r| r > 0) {
        for (c, left) in remaining.iter_mut().enumerate() {
            if *left == 0 {
                continue;
            }
            *left -= 1;
            let theta = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
            let cx = (w as f64 - 1.0) / 2.0 + radius * theta.cos() + rng.random_range(-jitter..=jitter);
            let cy = (h as f64 - 1.0) / 2.0 + radius * theta.sin() + rng.random_range(-jitter..=jitter);
            for y in 0..h {
                for x in 0..w {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    let v = 30.0 + 200.0 * (-d2 / (2.0 * sigma * sigma)).exp() + pixel_noise.sample(&mut rng);
                    data.push(v.round().clamp(0.0, 255.0));
                }
            }
            labels.push(c);
        }
    }
    let images = Tensor::new(vec![labels.len(), h, w, 1], data).expect("finite pixels");
    LabeledDataset::new(images, labels, LabeledDataset::numbered_classes(k)).expect("valid synthetic dataset")
}
