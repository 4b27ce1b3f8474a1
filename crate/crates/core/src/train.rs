//! Minibatch training with optional DP-SGD / DP-Adam.
//!
//! A private step computes per-sample gradients, clips each to norm `C`,
//! adds `N(0, σ²C²)` once to the clipped sum and hands the averaged result
//! to the optimizer. The accountant tracks ε after every epoch.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::{self, AccountantError, MechanismParams, PrivacyBudget};
use crate::data::{augment, AugmentConfig};
use crate::data::{ClassWeights, LabeledDataset};
use crate::nn::{weighted_cross_entropy, Network, NnError, PerSampleGrads};
use crate::optim::{self, ClipSpec, NoiseSpec, OptimError, OptimizerKind, OptimizerState};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Optimizer(#[from] OptimError),
    #[error("noise calibration failed: {0}")]
    Calibration(#[from] AccountantError),
    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence { epoch: usize, step: u64, loss: f64 },
}

/// How minibatches are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// A fresh permutation each epoch, cut into `ceil(n / B)` batches. The
    /// accountant is told `q = B / n`.
    #[default]
    Shuffle,
    /// Every sample joins each step independently with probability `B / n`;
    /// the noisy sum is divided by the expected batch size `B`.
    Poisson,
}

/// Where the noise multiplier comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Privacy {
    /// No clipping and no noise; ε = ∞.
    NonPrivate,
    NoiseMultiplier {
        sigma: f64,
    },
    /// Calibrate σ so that the full run spends at most `epsilon`.
    TargetEpsilon {
        epsilon: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { factor: 0.1, patience: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub plateau: PlateauConfig,
    pub clip: ClipSpec,
    pub privacy: Privacy,
    pub delta: f64,
    pub sampling: Sampling,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// `None` weighs every class equally.
    pub class_weights: Option<ClassWeights>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            min_learning_rate: 1e-6,
            plateau: PlateauConfig::default(),
            clip: ClipSpec::default(),
            privacy: Privacy::NonPrivate,
            delta: 1e-5,
            sampling: Sampling::Shuffle,
            seed: 42,
            augment: AugmentConfig::default(),
            class_weights: None,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    /// Accountant's ε after this epoch.
    #[serde(with = "crate::serde_ext::f64_or_inf")]
    pub epsilon: f64,
    pub learning_rate: f64,
    /// Mean L2 norm of the per-sample gradients before clipping; only known
    /// when per-sample gradients were materialized.
    pub mean_grad_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub sigma: f64,
    pub clip: ClipSpec,
    pub sampling: Sampling,
    pub sampling_rate: f64,
    pub steps: u64,
    #[serde(with = "crate::serde_ext::f64_or_inf")]
    pub epsilon: f64,
    pub delta: f64,
}

impl TrainingLog {
    /// One JSON object per epoch, newline-terminated.
    pub fn to_json_lines(&self) -> String {
        self.epochs.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
    }
}

/// Loss and accuracy of `net` on `ds`, evaluated in chunks.
pub fn evaluate(net: &Network, ds: &LabeledDataset, weights: &ClassWeights) -> Result<(f64, f64), NnError> {
    const CHUNK: usize = 512;
    let (mut loss, mut correct) = (0.0, 0usize);
    for start in (0..ds.len()).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(ds.len())).collect();
        let batch = ds.images().select_rows(&idx);
        let labels: Vec<usize> = idx.iter().map(|&i| ds.labels()[i]).collect();
        let logits = net.logits(&batch)?;
        let out = weighted_cross_entropy(&logits, &labels, weights)?;
        loss += out.per_sample.iter().sum::<f64>();
        correct += count_correct(&logits, &labels);
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    labels.iter().enumerate().filter(|&(i, &y)| argmax(logits.row(i)) == y).count()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn validate(cfg: &TrainConfig, train: &LabeledDataset, net: &Network) -> Result<(), TrainError> {
    if cfg.batch_size == 0 {
        return Err(TrainError::Config("batch size must be positive".into()));
    }
    if train.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    if train.image_shape() != net.input_shape() {
        return Err(TrainError::Config(format!(
            "dataset images {:?} do not match network input {:?}",
            train.image_shape(),
            net.input_shape()
        )));
    }
    if train.num_classes() != net.num_classes() {
        return Err(TrainError::Config(format!(
            "dataset has {} classes, network outputs {}",
            train.num_classes(),
            net.num_classes()
        )));
    }
    if let Some(w) = &cfg.class_weights {
        if w.len() != net.num_classes() {
            return Err(TrainError::Config(format!("{} class weights for {} classes", w.len(), net.num_classes())));
        }
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) && cfg.privacy != Privacy::NonPrivate {
        return Err(TrainError::Config(format!("delta {} must lie in (0, 1)", cfg.delta)));
    }
    if !(cfg.plateau.factor > 0.0 && cfg.plateau.factor <= 1.0) {
        return Err(TrainError::Config(format!("plateau factor {} must lie in (0, 1]", cfg.plateau.factor)));
    }
    Ok(())
}

/// Train `net` on `train`, optionally tracking `validation` for the plateau
/// schedule (the training loss is used when there is no validation set).
pub fn train_private(
    mut net: Network,
    train: &LabeledDataset,
    validation: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<(Network, TrainingLog), TrainError> {
    validate(cfg, train, &net)?;
    let n = train.len();
    let batch = cfg.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(batch);
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;
    let q = batch as f64 / n as f64;

    let (clip, sigma) = match cfg.privacy {
        Privacy::NonPrivate => (ClipSpec::unbounded(), 0.0),
        Privacy::NoiseMultiplier { sigma } => {
            NoiseSpec::new(sigma, 0, 0)?;
            (cfg.clip, sigma)
        }
        Privacy::TargetEpsilon { epsilon } => {
            if total_steps == 0 {
                (cfg.clip, 0.0)
            } else {
                let budget = PrivacyBudget::new(epsilon, cfg.delta)?;
                (cfg.clip, accountant::calibrate_noise(budget, q, total_steps)?.sigma)
            }
        }
    };
    // Per-sample gradients are only needed when something acts on them.
    let per_sample = clip.norm().is_finite() || sigma > 0.0;
    let private = cfg.privacy != Privacy::NonPrivate;
    let weights = cfg.class_weights.clone().unwrap_or_else(|| ClassWeights::uniform(net.num_classes()));
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, cfg.min_learning_rate)?;
    let orders = accountant::default_orders();
    let one_step =
        if private && sigma > 0.0 { Some(accountant::RdpCurve::subsampled_gaussian(q, sigma, &orders)?) } else { None };
    let epsilon_after = |steps: u64| -> Result<f64, AccountantError> {
        if steps == 0 {
            return Ok(0.0);
        }
        match &one_step {
            Some(curve) => Ok(accountant::rdp_to_dp(&curve.compose(steps), cfg.delta)?.epsilon),
            None => Ok(f64::INFINITY),
        }
    };

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    let mut best_val = f64::INFINITY;
    let mut stale = 0usize;
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(cfg, n, batch, steps_per_epoch, epoch, step);
        let (mut loss_sum, mut seen, mut correct) = (0.0, 0usize, 0usize);
        let (mut norm_sum, mut norm_count) = (0.0, 0usize);
        for idx in batches {
            let update = if idx.is_empty() {
                // Poisson sampling can draw an empty batch; its release is pure noise.
                let empty = PerSampleGrads::zeros(0, net.param_count());
                let noise = NoiseSpec::new(sigma, cfg.seed, step)?;
                optim::noisy_sum(&empty, clip, noise).into_iter().map(|v| v / batch as f64).collect()
            } else {
                let mut x = train.images().select_rows(&idx);
                if cfg.augment.enabled {
                    x = augment(&x, &cfg.augment, step);
                }
                let labels: Vec<usize> = idx.iter().map(|&i| train.labels()[i]).collect();
                let (logits, cache) = net.forward(&x).map_err(|e| match e {
                    NnError::NonFinite(_) => TrainError::Divergence { epoch, step, loss: f64::NAN },
                    e => e.into(),
                })?;
                let out = weighted_cross_entropy(&logits, &labels, &weights)?;
                if !out.loss.is_finite() {
                    return Err(TrainError::Divergence { epoch, step, loss: out.loss });
                }
                loss_sum += out.per_sample.iter().sum::<f64>();
                seen += labels.len();
                correct += count_correct(&logits, &labels);
                let denom = match cfg.sampling {
                    Sampling::Shuffle => idx.len(),
                    Sampling::Poisson => batch,
                } as f64;
                if per_sample {
                    let mut grads = net.backward_per_sample(&cache, &out.per_sample_dlogits)?;
                    for i in 0..grads.batch_size() {
                        norm_sum += grads.row_norm(i);
                    }
                    norm_count += grads.batch_size();
                    optim::clip_in_place(&mut grads, clip);
                    let noise = NoiseSpec::new(sigma, cfg.seed, step)?;
                    optim::noisy_sum(&grads, clip, noise).into_iter().map(|v| v / denom).collect()
                } else {
                    net.backward_sum(&cache, &out.per_sample_dlogits)?
                        .into_iter()
                        .map(|v| v / denom)
                        .collect::<Vec<_>>()
                }
            };
            opt.step(&mut net, &update)?;
            step += 1;
        }
        let (val_loss, val_accuracy) = match validation {
            Some(v) => {
                let (l, a) = evaluate(&net, v, &weights)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        let train_loss = if seen > 0 { loss_sum / seen as f64 } else { f64::NAN };
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored.is_nan() || monitored.is_infinite() {
            return Err(TrainError::Divergence { epoch, step, loss: monitored });
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: train_loss,
            accuracy: if seen > 0 { correct as f64 / seen as f64 } else { 0.0 },
            val_loss,
            val_accuracy,
            epsilon: epsilon_after(step)?,
            learning_rate: opt.learning_rate(),
            mean_grad_norm: (norm_count > 0).then(|| norm_sum / norm_count as f64),
        };
        log::info!("{}", serde_json::to_string(&record).expect("record serializes"));
        records.push(record);
        if monitored < best_val {
            best_val = monitored;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau.patience {
                opt.decay(cfg.plateau.factor);
                stale = 0;
            }
        }
    }
    let log = TrainingLog {
        epochs: records,
        sigma,
        clip,
        sampling: cfg.sampling,
        sampling_rate: q,
        steps: step,
        epsilon: epsilon_after(step)?,
        delta: cfg.delta,
    };
    Ok((net, log))
}

/// Sample indices of every batch in `epoch`. `first_step` is the global
/// step number of the epoch's first batch (keys the Poisson draws).
fn epoch_batches(
    cfg: &TrainConfig,
    n: usize,
    batch: usize,
    steps_per_epoch: usize,
    epoch: usize,
    first_step: u64,
) -> Vec<Vec<usize>> {
    match cfg.sampling {
        Sampling::Shuffle => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::keyed(cfg.seed, Stream::Shuffle, epoch as u64));
            order.chunks(batch).map(<[usize]>::to_vec).collect()
        }
        Sampling::Poisson => {
            let q = batch as f64 / n as f64;
            (0..steps_per_epoch as u64)
                .map(|s| {
                    let mut r = rng::keyed(cfg.seed, Stream::Poisson, first_step + s);
                    (0..n).filter(|_| r.random_bool(q)).collect()
                })
                .collect()
        }
    }
}

/// Mechanism parameters a config would realize on `n` training samples,
/// or `None` for a non-private config.
pub fn mechanism_for(cfg: &TrainConfig, n: usize, sigma: f64) -> Option<MechanismParams> {
    (cfg.privacy != Privacy::NonPrivate).then(|| MechanismParams::minibatch(n, cfg.batch_size, cfg.epochs, sigma))
}
