use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// Random affine augmentation of training images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Maximum shift as a fraction of width/height.
    pub max_shift: f64,
    pub max_rotation_deg: f64,
    pub horizontal_flip: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { enabled: false, max_shift: 0.05, max_rotation_deg: 10.0, horizontal_flip: false, seed: 42 }
    }
}

/// Augment every image of an `(N, H, W, C)` batch. `key` selects the random
/// stream (the trainer passes its step counter), so a given `(seed, key)`
/// always yields the same batch. Transforms are sampled per image and applied
/// by inverse mapping with bilinear interpolation; pixels mapped from outside
/// the source are zero.
pub fn augment(batch: &Tensor, cfg: &AugmentConfig, key: u64) -> Tensor {
    if !cfg.enabled {
        return batch.clone();
    }
    let &[n, h, w, c] = batch.shape() else { panic!("augment expects (N, H, W, C), got {:?}", batch.shape()) };
    let mut rng = rng::keyed(cfg.seed, Stream::Augment, key);
    let mut out = Vec::with_capacity(batch.len());
    for i in 0..n {
        let src = batch.row(i);
        let shift_x =
            if cfg.max_shift > 0.0 { rng.random_range(-cfg.max_shift..=cfg.max_shift) * w as f64 } else { 0.0 };
        let shift_y =
            if cfg.max_shift > 0.0 { rng.random_range(-cfg.max_shift..=cfg.max_shift) * h as f64 } else { 0.0 };
        let angle = if cfg.max_rotation_deg > 0.0 {
            rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg).to_radians()
        } else {
            0.0
        };
        let flip = cfg.horizontal_flip && rng.random_bool(0.5);
        if shift_x == 0.0 && shift_y == 0.0 && angle == 0.0 && !flip {
            out.extend_from_slice(src);
            continue;
        }
        let (sin, cos) = angle.sin_cos();
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        for y in 0..h {
            for x in 0..w {
                // Output pixel -> source coordinates (inverse transform).
                let ox = if flip { (w - 1 - x) as f64 } else { x as f64 } - cx - shift_x;
                let oy = y as f64 - cy - shift_y;
                let sx = cos * ox + sin * oy + cx;
                let sy = -sin * ox + cos * oy + cy;
                for ch in 0..c {
                    out.push(bilinear(src, h, w, c, ch, sx, sy));
                }
            }
        }
    }
    Tensor::from_parts_unchecked(batch.shape().to_vec(), out)
}

fn bilinear(src: &[f64], h: usize, w: usize, c: usize, ch: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            src[(yy as usize * w + xx as usize) * c + ch]
        }
    };
    at(y0, x0) * (1.0 - fx) * (1.0 - fy)
        + at(y0, x0 + 1.0) * fx * (1.0 - fy)
        + at(y0 + 1.0, x0) * (1.0 - fx) * fy
        + at(y0 + 1.0, x0 + 1.0) * fx * fy
}
