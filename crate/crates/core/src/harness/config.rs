//! Experiment configuration, read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::AugmentConfig;
use crate::metrics::Averaging;
use crate::mia::AttackOptions;
use crate::nn::{Activation, LayerSpec, NetworkSpec};
use crate::optim::{ClipSpec, OptimizerKind};
use crate::train::{PlateauConfig, Sampling};

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case")]
pub enum DataSource {
    /// IDX image and label files, optionally gzipped.
    Idx { images: PathBuf, labels: PathBuf },
    /// The crate's raw container.
    Raw { path: PathBuf },
    /// Generated two-or-more-class image blobs.
    Synthetic {
        counts: Vec<usize>,
        height: usize,
        width: usize,
        #[serde(default = "default_jitter")]
        jitter: f64,
        #[serde(default = "default_pixel_noise")]
        noise: f64,
    },
}

fn default_jitter() -> f64 {
    0.5
}

fn default_pixel_noise() -> f64 {
    30.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UndersampleSpec {
    pub minority: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(flatten)]
    pub source: DataSource,
    /// Keep only the first `limit` samples.
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub dedup: bool,
    #[serde(default)]
    pub undersample: Option<UndersampleSpec>,
    /// Weigh the loss by inverse class frequency of the training split.
    #[serde(default)]
    pub class_weights: bool,
    /// (train, validation, test) fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Repeat a single grayscale channel three times.
    #[serde(default)]
    pub rgb: bool,
    #[serde(default)]
    pub averaging: Averaging,
}

fn default_split() -> [f64; 3] {
    [0.8, 0.05, 0.15]
}

impl DatasetConfig {
    pub fn synthetic(counts: Vec<usize>, height: usize, width: usize) -> Self {
        Self {
            source: DataSource::Synthetic {
                counts,
                height,
                width,
                jitter: default_jitter(),
                noise: default_pixel_noise(),
            },
            limit: None,
            dedup: false,
            undersample: None,
            class_weights: false,
            split: default_split(),
            rgb: false,
            averaging: Averaging::Macro,
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.source {
            DataSource::Idx { images, labels } => {
                fix(images);
                fix(labels);
            }
            DataSource::Raw { path } => fix(path),
            DataSource::Synthetic { .. } => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Mlp,
    #[default]
    CnnSmall,
    CnnResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub activation: Activation,
    /// Hidden units (mlp) or channels of the first convolution.
    pub width: Option<usize>,
    /// Hidden layers (mlp), convolution blocks (cnn-small) or residual
    /// blocks (cnn-residual).
    pub depth: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { architecture: Architecture::CnnSmall, activation: Activation::Relu, width: None, depth: None }
    }
}

impl ModelConfig {
    pub fn width(&self) -> usize {
        self.width.unwrap_or(match self.architecture {
            Architecture::Mlp => 128,
            Architecture::CnnSmall | Architecture::CnnResidual => 8,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth.unwrap_or(match self.architecture {
            Architecture::Mlp => 1,
            Architecture::CnnSmall => 2,
            Architecture::CnnResidual => 1,
        })
    }

    /// Layer list for images of `input_shape` (`[h, w, c]`) and `classes`
    /// outputs.
    pub fn network_spec(&self, input_shape: &[usize], classes: usize) -> Result<NetworkSpec, HarnessError> {
        let (w, depth) = (self.width(), self.depth());
        if w == 0 || depth == 0 {
            return Err(HarnessError::Config("model width and depth must be positive".into()));
        }
        let channels = *input_shape.last().unwrap_or(&1);
        let mut layers = Vec::new();
        match self.architecture {
            Architecture::Mlp => {
                layers.push(LayerSpec::Flatten);
                let mut fan_in: usize = input_shape.iter().product();
                for _ in 0..depth {
                    layers.extend([LayerSpec::dense(fan_in, w), LayerSpec::Activation]);
                    fan_in = w;
                }
            }
            Architecture::CnnSmall => {
                let mut c = channels;
                for block in 0..depth {
                    let out = w << block;
                    layers.extend([LayerSpec::conv(c, out, 3), LayerSpec::Activation, LayerSpec::max_pool(2)]);
                    c = out;
                }
                layers.push(LayerSpec::Flatten);
            }
            Architecture::CnnResidual => {
                layers.extend([LayerSpec::conv(channels, w, 3), LayerSpec::Activation, LayerSpec::max_pool(2)]);
                for _ in 0..depth {
                    layers.push(LayerSpec::residual(w, w, 3));
                }
                layers.extend([LayerSpec::max_pool(2), LayerSpec::Flatten]);
            }
        }
        let body = NetworkSpec::new(input_shape.to_vec(), self.activation, layers.clone());
        let features = crate::nn::output_len(&body)
            .map_err(|e| HarnessError::Config(format!("{:?} does not fit {input_shape:?}: {e}", self.architecture)))?;
        layers.push(LayerSpec::dense(features, classes));
        Ok(NetworkSpec::new(input_shape.to_vec(), self.activation, layers))
    }
}

/// Non-private training on a public dataset before private fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub dataset: DatasetConfig,
    pub epochs: usize,
    #[serde(default)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyTarget {
    /// `inf` trains without clipping or noise.
    #[serde(with = "crate::serde_ext::f64_or_inf")]
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for PrivacyTarget {
    fn default() -> Self {
        Self { epsilon: f64::INFINITY, delta: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub plateau: PlateauConfig,
    pub clip: ClipSpec,
    pub sampling: Sampling,
    pub augment: AugmentConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            min_learning_rate: 1e-6,
            plateau: PlateauConfig::default(),
            clip: ClipSpec::default(),
            sampling: Sampling::Shuffle,
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub repeats: usize,
    /// Defaults to the experiment seed.
    pub seed: Option<u64>,
    pub level: f64,
    #[serde(flatten)]
    pub options: AttackOptions,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { repeats: 100, seed: None, level: 0.95, options: AttackOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Variant label used as the table row.
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: Option<PretrainConfig>,
    #[serde(default)]
    pub privacy: PrivacyTarget,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub attack: AttackConfig,
}

fn default_seed() -> u64 {
    42
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, dataset: DatasetConfig) -> Self {
        Self {
            name: name.into(),
            seed: default_seed(),
            dataset,
            model: ModelConfig::default(),
            pretrain: None,
            privacy: PrivacyTarget::default(),
            training: TrainingConfig::default(),
            attack: AttackConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Read a config file; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.resolve_paths(base);
        if let Some(p) = cfg.pretrain.as_mut() {
            p.dataset.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        let mut c = self.clone();
        c.privacy.epsilon = epsilon;
        c
    }

    pub fn attack_seed(&self) -> u64 {
        self.attack.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let eps = self.privacy.epsilon;
        if eps.is_nan() || eps < 0.0 {
            return Err(HarnessError::Config(format!("epsilon {eps} must be >= 0 or inf")));
        }
        if !(self.privacy.delta > 0.0 && self.privacy.delta < 1.0) {
            return Err(HarnessError::Config(format!("delta {} must lie in (0, 1)", self.privacy.delta)));
        }
        if self.training.batch_size == 0 {
            return Err(HarnessError::Config("batch size must be positive".into()));
        }
        if self.attack.repeats < 2 {
            return Err(HarnessError::Config(format!("need at least 2 attack repeats, got {}", self.attack.repeats)));
        }
        if !(self.attack.level > 0.0 && self.attack.level < 1.0) {
            return Err(HarnessError::Config(format!("confidence level {} outside (0, 1)", self.attack.level)));
        }
        Ok(())
    }
}
