//! One experiment cell: data → (pre-)training → utility → attacks → bound.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, DatasetConfig, ExperimentConfig};
use super::HarnessError;
use crate::accountant::default_orders;
use crate::data::{load_idx, load_raw, synthetic_blobs, LabeledDataset, SplitSpec};
use crate::metrics::{bound_check, confidence_interval, utility_scores, AdvantageCi, BoundCheck, UtilityScores};
use crate::mia::{build_attack_features, repeat_attacks_on, AttackKind};
use crate::nn::{build_network, Network};
use crate::train::{argmax, train_private, Privacy, TrainConfig, TrainingLog};

/// How the reported ε was computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountingProvenance {
    pub method: String,
    pub orders: usize,
    pub min_order: f64,
    pub max_order: f64,
    /// Minimizing order of the final conversion, if private.
    pub order: Option<f64>,
    pub sampling_rate: f64,
    pub steps: u64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub classes: usize,
    pub duplicates_removed: usize,
    pub class_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub interval: AdvantageCi,
    pub bound: BoundCheck,
    /// Best-attack advantage of each repetition.
    pub advantages: Vec<f64>,
    /// How often each attacker was the strongest, in [`AttackKind::ALL`] order.
    pub wins: Vec<(AttackKind, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    #[serde(with = "crate::serde_ext::f64_or_inf")]
    pub target_epsilon: f64,
    #[serde(with = "crate::serde_ext::f64_or_inf")]
    pub achieved_epsilon: f64,
    pub delta: f64,
    pub accounting: AccountingProvenance,
    pub dataset: DatasetSummary,
    pub utility: UtilityScores,
    /// `None` when the model is useless (F1 = 0) and attacking it is moot.
    pub attack: Option<AttackSummary>,
    pub training: TrainingLog,
    pub pretraining: Option<TrainingLog>,
    /// Seconds; left empty by [`run_experiment`] so reports stay reproducible.
    pub wall_clock: Option<f64>,
}

impl ExperimentReport {
    pub fn variant(&self) -> &str {
        &self.config.name
    }
}

pub(crate) fn load_dataset(cfg: &DatasetConfig, seed: u64) -> Result<LabeledDataset, HarnessError> {
    let ds = match &cfg.source {
        DataSource::Idx { images, labels } => load_idx(images, labels)?,
        DataSource::Raw { path } => load_raw(path)?,
        DataSource::Synthetic { counts, height, width, jitter, noise } => {
            synthetic_blobs(counts, *height, *width, *jitter, *noise, seed)
        }
    };
    Ok(match cfg.limit {
        Some(n) => ds.take(n),
        None => ds,
    })
}

/// Everything preprocessing produces.
pub(crate) struct Prepared {
    pub train: LabeledDataset,
    pub validation: Option<LabeledDataset>,
    pub test: LabeledDataset,
    pub duplicates_removed: usize,
}

pub(crate) fn prepare(cfg: &DatasetConfig, seed: u64) -> Result<Prepared, HarnessError> {
    let mut ds = load_dataset(cfg, seed)?;
    let mut duplicates_removed = 0;
    if cfg.dedup {
        (ds, duplicates_removed) = ds.dedup();
    }
    if let Some(u) = cfg.undersample {
        ds = ds.undersample(u.minority, u.ratio, seed)?;
    }
    if cfg.rgb {
        ds = ds.to_rgb()?;
    }
    ds = ds.normalized()?;
    let [tr, va, te] = cfg.split;
    let split = ds.split(&SplitSpec::new(tr, va, te, seed))?;
    let test = split
        .test
        .ok_or_else(|| HarnessError::Config("test split is empty; non-members are needed for auditing".into()))?;
    Ok(Prepared { train: split.train, validation: split.validation, test, duplicates_removed })
}

fn pretrain(cfg: &ExperimentConfig, classes: usize) -> Result<(Option<Network>, Option<TrainingLog>), HarnessError> {
    let Some(p) = &cfg.pretrain else {
        return Ok((None, None));
    };
    let public = prepare(&p.dataset, cfg.seed)?;
    let spec = cfg.model.network_spec(public.train.image_shape(), public.train.num_classes())?;
    let net = build_network(&spec, cfg.seed)?;
    let tc = TrainConfig {
        epochs: p.epochs,
        learning_rate: p.learning_rate.unwrap_or(cfg.training.learning_rate),
        privacy: Privacy::NonPrivate,
        ..train_config(cfg, None)
    };
    let (net, log) = train_private(net, &public.train, public.validation.as_ref(), &tc)?;
    // Only the head is replaced; the fine-tuning run starts with fresh
    // optimizer and privacy state.
    let tuned = net.replace_head(classes, cfg.seed)?;
    Ok((Some(tuned), Some(log)))
}

fn train_config(cfg: &ExperimentConfig, class_weights: Option<crate::data::ClassWeights>) -> TrainConfig {
    let t = &cfg.training;
    TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        optimizer: t.optimizer,
        learning_rate: t.learning_rate,
        min_learning_rate: t.min_learning_rate,
        plateau: t.plateau,
        clip: t.clip,
        privacy: if cfg.privacy.epsilon.is_infinite() {
            Privacy::NonPrivate
        } else {
            Privacy::TargetEpsilon { epsilon: cfg.privacy.epsilon }
        },
        delta: cfg.privacy.delta,
        sampling: t.sampling,
        seed: cfg.seed,
        augment: t.augment,
        class_weights,
    }
}

fn predictions(net: &Network, ds: &LabeledDataset) -> Result<Vec<usize>, HarnessError> {
    const CHUNK: usize = 512;
    let mut out = Vec::with_capacity(ds.len());
    for start in (0..ds.len()).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(ds.len())).collect();
        let logits = net.logits(&ds.images().select_rows(&idx))?;
        out.extend((0..idx.len()).map(|r| argmax(logits.row(r))));
    }
    Ok(out)
}

/// Run one cell deterministically; `wall_clock` stays `None`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let data = prepare(&cfg.dataset, cfg.seed)?;
    let n = data.train.len();
    if cfg.privacy.epsilon.is_finite() && cfg.privacy.delta >= 1.0 / n as f64 {
        log::warn!("delta {} is not much smaller than 1/n = {}", cfg.privacy.delta, 1.0 / n as f64);
    }
    let classes = data.train.num_classes();
    let weights = if cfg.dataset.class_weights { Some(data.train.class_weights()?) } else { None };

    let (pretrained, pretraining) = pretrain(cfg, classes)?;
    let net = match pretrained {
        Some(net) => {
            if net.input_shape() != data.train.image_shape() {
                return Err(HarnessError::Config(format!(
                    "public images {:?} do not match private images {:?}",
                    net.input_shape(),
                    data.train.image_shape()
                )));
            }
            net
        }
        None => build_network(&cfg.model.network_spec(data.train.image_shape(), classes)?, cfg.seed)?,
    };
    let tc = train_config(cfg, weights.clone());
    let (net, log) = train_private(net, &data.train, data.validation.as_ref(), &tc)?;

    let preds = predictions(&net, &data.test)?;
    let utility = utility_scores(&preds, data.test.labels(), classes, cfg.dataset.averaging)?;

    let attack = if utility.f1 > 0.0 {
        let input = build_attack_features(&net, &data.train, &data.test)?;
        let suites = repeat_attacks_on(&input, cfg.attack.repeats, cfg.attack_seed(), &cfg.attack.options)?;
        let advantages: Vec<f64> = suites.iter().map(|s| s.best.advantage).collect();
        let interval = confidence_interval(&advantages, cfg.attack.level)?;
        let bound = bound_check(log.epsilon, cfg.privacy.delta, interval)?;
        let wins = AttackKind::ALL.iter().map(|&k| (k, suites.iter().filter(|s| s.best.kind == k).count())).collect();
        Some(AttackSummary { interval, bound, advantages, wins })
    } else {
        None
    };

    let orders = default_orders();
    let order = match crate::train::mechanism_for(&tc, n, log.sigma) {
        Some(m) if log.sigma > 0.0 && log.steps > 0 => Some(m.epsilon(cfg.privacy.delta)?.order),
        _ => None,
    };
    let accounting = AccountingProvenance {
        method: format!("rdp-subsampled-gaussian ({:?} sampling)", log.sampling).to_lowercase(),
        orders: orders.len(),
        min_order: orders[0],
        max_order: *orders.last().expect("non-empty grid"),
        order,
        sampling_rate: log.sampling_rate,
        steps: log.steps,
        sigma: log.sigma,
    };
    Ok(ExperimentReport {
        config: cfg.clone(),
        target_epsilon: cfg.privacy.epsilon,
        achieved_epsilon: log.epsilon,
        delta: cfg.privacy.delta,
        accounting,
        dataset: DatasetSummary {
            train: n,
            validation: data.validation.as_ref().map_or(0, LabeledDataset::len),
            test: data.test.len(),
            classes,
            duplicates_removed: data.duplicates_removed,
            class_weights: weights.map(|w| w.as_slice().to_vec()),
        },
        utility,
        attack,
        training: log,
        pretraining,
        wall_clock: None,
    })
}

/// As [`run_experiment`], recording elapsed seconds.
pub fn run_experiment_timed(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let start = Instant::now();
    let mut r = run_experiment(cfg)?;
    r.wall_clock = Some(start.elapsed().as_secs_f64());
    Ok(r)
}

/// Outcome of one sweep cell. Failed cells keep their coordinates so the
/// table can mark them NA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Cell {
    Done(Box<ExperimentReport>),
    Failed {
        variant: String,
        #[serde(with = "crate::serde_ext::f64_or_inf")]
        epsilon: f64,
        error: String,
        exit_code: i32,
    },
}

impl Cell {
    pub fn variant(&self) -> &str {
        match self {
            Cell::Done(r) => r.variant(),
            Cell::Failed { variant, .. } => variant,
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            Cell::Done(r) => r.target_epsilon,
            Cell::Failed { epsilon, .. } => *epsilon,
        }
    }

    pub fn report(&self) -> Option<&ExperimentReport> {
        match self {
            Cell::Done(r) => Some(r),
            Cell::Failed { .. } => None,
        }
    }
}

pub const SWEEP_EPSILONS: [f64; 4] = [f64::INFINITY, 10.0, 1.0, 0.1];

/// Every variant at every ε. Cells run in parallel; each owns its seed, so
/// the result does not depend on scheduling. Output order is variant-major.
pub fn run_sweep(variants: &[ExperimentConfig], epsilons: &[f64], timed: bool) -> Vec<Cell> {
    let jobs: Vec<ExperimentConfig> =
        variants.iter().flat_map(|v| epsilons.iter().map(move |&e| v.with_epsilon(e))).collect();
    jobs.par_iter()
        .map(|cfg| {
            let run = if timed { run_experiment_timed(cfg) } else { run_experiment(cfg) };
            match run {
                Ok(r) => Cell::Done(Box::new(r)),
                Err(e) => {
                    log::error!("{} at epsilon {}: {e}", cfg.name, cfg.privacy.epsilon);
                    Cell::Failed {
                        variant: cfg.name.clone(),
                        epsilon: cfg.privacy.epsilon,
                        error: e.to_string(),
                        exit_code: e.exit_code(),
                    }
                }
            }
        })
        .collect()
}
