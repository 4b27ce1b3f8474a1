//! Membership advantage, confidence intervals, the DP advantage bound and
//! classification utility.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::rng::{self, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{name} = {value} outside [0, 1]")]
    Rate { name: &'static str, value: f64 },
    #[error("need at least 2 samples for an interval, got {0}")]
    TooFewSamples(usize),
    #[error("confidence level {0} outside (0, 1)")]
    Level(f64),
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("class id {class} outside 0..{classes}")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("privacy parameter out of domain: {0}")]
    Budget(String),
}

fn check_rate(name: &'static str, value: f64) -> Result<(), MetricsError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(MetricsError::Rate { name, value })
    }
}

/// `TPR − FPR`.
pub fn membership_advantage(tpr: f64, fpr: f64) -> Result<f64, MetricsError> {
    check_rate("tpr", tpr)?;
    check_rate("fpr", fpr)?;
    Ok(tpr - fpr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMethod {
    #[default]
    StudentT,
    /// Percentile bootstrap with a fixed resampling seed.
    Bootstrap { resamples: usize, seed: u64 },
}

/// Interval over repeated attack advantages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageCi {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub method: IntervalMethod,
}

impl AdvantageCi {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

fn mean_sd(samples: &[f64]) -> (f64, f64) {
    // Constant input: exact, without summation rounding.
    if samples.iter().all(|&x| x == samples[0]) {
        return (samples[0], 0.0);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `mean ± t(1 − (1 − level)/2, n − 1) · sd / √n`, clamped to `[−1, 1]`.
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<AdvantageCi, MetricsError> {
    confidence_interval_with(samples, level, IntervalMethod::StudentT)
}

pub fn confidence_interval_with(
    samples: &[f64],
    level: f64,
    method: IntervalMethod,
) -> Result<AdvantageCi, MetricsError> {
    let n = samples.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::Level(level));
    }
    let (mean, sd) = mean_sd(samples);
    let (lo, hi) = match method {
        IntervalMethod::StudentT => {
            if sd == 0.0 {
                (mean, mean)
            } else {
                let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n >= 2").inverse_cdf(0.5 + level / 2.0);
                let half = t * sd / (n as f64).sqrt();
                (mean - half, mean + half)
            }
        }
        IntervalMethod::Bootstrap { resamples, seed } => bootstrap(samples, level, resamples.max(1), seed),
    };
    Ok(AdvantageCi { lower: lo.clamp(-1.0, 1.0), upper: hi.clamp(-1.0, 1.0), level, n, mean, std_dev: sd, method })
}

fn bootstrap(samples: &[f64], level: f64, resamples: usize, seed: u64) -> (f64, f64) {
    let n = samples.len();
    let mut rng = rng::keyed(seed, Stream::Bootstrap, 0);
    let mut means: Vec<f64> =
        (0..resamples).map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[((p * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    let tail = (1.0 - level) / 2.0;
    (q(tail), q(1.0 - tail))
}

/// `e^ε − 1 + δ`.
pub fn dp_bound(epsilon: f64, delta: f64) -> Result<f64, MetricsError> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(MetricsError::Budget(format!("epsilon {epsilon} must be >= 0")));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(MetricsError::Budget(format!("delta {delta} must lie in [0, 1)")));
    }
    Ok(epsilon.exp_m1() + delta)
}

/// Observed interval against the theoretical ceiling. An unsatisfied check
/// is a finding to report, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    #[serde(with = "crate::serde_ext::f64_or_inf")]
    pub epsilon: f64,
    pub delta: f64,
    #[serde(with = "crate::serde_ext::f64_or_inf")]
    pub bound: f64,
    pub observed: AdvantageCi,
    pub satisfied: bool,
}

pub fn bound_check(epsilon: f64, delta: f64, observed: AdvantageCi) -> Result<BoundCheck, MetricsError> {
    let bound = dp_bound(epsilon, delta)?;
    Ok(BoundCheck { epsilon, delta, bound, observed, satisfied: observed.upper <= bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    #[default]
    Macro,
    /// F1 of the given positive class.
    Binary { positive: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityScores {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1_per_class: Vec<f64>,
    pub f1: f64,
    pub averaging: Averaging,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, per-class precision/recall/F1 and an averaged F1. Undefined
/// ratios (no predictions or no instances of a class) count as 0.
pub fn utility_scores(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
    averaging: Averaging,
) -> Result<UtilityScores, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        for c in [p, y] {
            if c >= num_classes {
                return Err(MetricsError::ClassOutOfRange { class: c, classes: num_classes });
            }
        }
        confusion[y][p] += 1;
    }
    Ok(scores_from_confusion(confusion, averaging))
}

pub fn scores_from_confusion(confusion: Vec<Vec<usize>>, averaging: Averaging) -> UtilityScores {
    let k = confusion.len();
    let total: usize = confusion.iter().flatten().sum();
    let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
    let mut precision = Vec::with_capacity(k);
    let mut recall = Vec::with_capacity(k);
    let mut f1_per_class = Vec::with_capacity(k);
    for (c, row) in confusion.iter().enumerate() {
        let tp = row[c];
        let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
        let actual: usize = row.iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        precision.push(p);
        recall.push(r);
        f1_per_class.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    }
    let f1 = match averaging {
        Averaging::Macro => f1_per_class.iter().sum::<f64>() / k.max(1) as f64,
        Averaging::Binary { positive } => f1_per_class.get(positive).copied().unwrap_or(0.0),
    };
    UtilityScores { accuracy: ratio(trace, total), precision, recall, f1_per_class, f1, averaging, confusion }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantage_arithmetic() {
        assert!((membership_advantage(0.7, 0.45).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(membership_advantage(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(membership_advantage(0.3, 0.3).unwrap(), 0.0);
        assert!(membership_advantage(1.1, 0.0).is_err());
    }

    #[test]
    fn zero_variance_interval_is_a_point() {
        let ci = confidence_interval(&[0.2; 10], 0.95).unwrap();
        assert_eq!((ci.lower, ci.upper), (0.2, 0.2));
        assert!(confidence_interval(&[0.2], 0.95).is_err());
    }

    #[test]
    fn interval_clamps_to_unit_range() {
        let mut s = vec![1.0; 50];
        s.extend([0.5; 2]);
        let ci = confidence_interval(&s, 0.95).unwrap();
        assert!(ci.mean > 0.97);
        assert_eq!(ci.upper, 1.0);
        assert!(ci.lower <= ci.mean);
    }

    #[test]
    fn dp_bound_values() {
        assert_eq!(dp_bound(0.0, 0.0).unwrap(), 0.0);
        assert!((dp_bound(1.0, 1e-4).unwrap() - 1.718_381_828_459_045).abs() < 1e-12);
        assert!((dp_bound(0.1, 1e-5).unwrap() - 0.105_180_918_075_647_6).abs() < 1e-12);
        assert!(dp_bound(-1.0, 0.0).is_err());
        assert!(dp_bound(1.0, 1.0).is_err());
    }

    #[test]
    fn majority_predictor_has_zero_minority_f1() {
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 60)).collect();
        let s = utility_scores(&[0; 100], &labels, 2, Averaging::Binary { positive: 1 }).unwrap();
        assert!((s.accuracy - 0.6).abs() < 1e-15);
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn confusion_matrix_example() {
        let s = scores_from_confusion(vec![vec![50, 10], vec![5, 35]], Averaging::Binary { positive: 1 });
        assert!((s.accuracy - 0.85).abs() < 1e-15);
        let p: f64 = 35.0 / 45.0;
        let r: f64 = 35.0 / 40.0;
        assert!((s.f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
        assert!((s.f1 - 0.8235).abs() < 1e-4);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let s: Vec<f64> = (0..40).map(|i| (i % 7) as f64 / 10.0).collect();
        let m = IntervalMethod::Bootstrap { resamples: 500, seed: 3 };
        let a = confidence_interval_with(&s, 0.95, m).unwrap();
        assert_eq!(a, confidence_interval_with(&s, 0.95, m).unwrap());
        assert!(a.lower < a.mean && a.mean < a.upper);
    }
}
