//! Black-box membership inference against a single target model.
//!
//! Every training sample (member) and test sample (non-member) becomes a
//! [`FeatureRow`] built from the target's output alone. Each attack splits
//! both pools 50/50 into attacker-train and attacker-eval halves, balances
//! member and non-member counts on both halves by subsampling, fits one of
//! four attackers and reports `TPR − FPR` on attacker-eval.

mod attackers;
mod io;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::nn::{log_sum_exp, Network, NnError};
use crate::rng::{self, Stream};
use crate::train::argmax;

pub use io::{read_features, write_features, FEATURE_MAGIC};

#[derive(Debug, Error)]
pub enum MiaError {
    #[error("{0} pool is empty")]
    EmptyPool(&'static str),
    #[error("feature rows have {found} confidences, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid feature row: {0}")]
    InvalidFeature(String),
    #[error("attacker-train split has only {0}; cannot fit an attacker")]
    DegenerateTrain(&'static str),
    #[error("need at least 2 attack repetitions, got {0}")]
    TooFewRepeats(usize),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: malformed feature file: {reason}")]
    Format { path: String, reason: String },
}

/// Attack features of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    /// Softmax confidences sorted in descending order.
    pub confidences: Vec<f64>,
    /// Cross-entropy of the true class, `−log p_y`.
    pub loss: f64,
    pub correct: bool,
    pub class: usize,
}

impl FeatureRow {
    /// Sorts the confidences and checks the row.
    pub fn new(mut confidences: Vec<f64>, loss: f64, correct: bool, class: usize) -> Result<Self, MiaError> {
        if confidences.is_empty() {
            return Err(MiaError::InvalidFeature("no confidences".into()));
        }
        if confidences.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(MiaError::InvalidFeature("confidences must be finite and non-negative".into()));
        }
        let total: f64 = confidences.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MiaError::InvalidFeature(format!("confidences sum to {total}")));
        }
        if !(loss.is_finite() && loss >= 0.0) {
            return Err(MiaError::InvalidFeature(format!("loss {loss} must be finite and >= 0")));
        }
        confidences.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { confidences, loss, correct, class })
    }

    /// Numeric attacker input: confidences, loss, correctness flag.
    pub fn vector(&self) -> Vec<f64> {
        let mut v = self.confidences.clone();
        v.push(self.loss);
        v.push(if self.correct { 1.0 } else { 0.0 });
        v
    }
}

/// Member and non-member feature pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackInput {
    members: Vec<FeatureRow>,
    nonmembers: Vec<FeatureRow>,
}

impl AttackInput {
    pub fn new(members: Vec<FeatureRow>, nonmembers: Vec<FeatureRow>) -> Result<Self, MiaError> {
        let first = members.first().ok_or(MiaError::EmptyPool("member"))?;
        if nonmembers.is_empty() {
            return Err(MiaError::EmptyPool("non-member"));
        }
        let k = first.confidences.len();
        if let Some(r) = members.iter().chain(&nonmembers).find(|r| r.confidences.len() != k) {
            return Err(MiaError::Dimension { expected: k, found: r.confidences.len() });
        }
        Ok(Self { members, nonmembers })
    }

    pub fn members(&self) -> &[FeatureRow] {
        &self.members
    }

    pub fn nonmembers(&self) -> &[FeatureRow] {
        &self.nonmembers
    }

    pub fn num_confidences(&self) -> usize {
        self.members[0].confidences.len()
    }
}

fn features_of(target: &Network, ds: &LabeledDataset) -> Result<Vec<FeatureRow>, MiaError> {
    const CHUNK: usize = 512;
    let mut rows = Vec::with_capacity(ds.len());
    for start in (0..ds.len()).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(ds.len())).collect();
        let logits = target.logits(&ds.images().select_rows(&idx))?;
        for (r, &i) in idx.iter().enumerate() {
            let z = logits.row(r);
            let y = ds.labels()[i];
            let lse = log_sum_exp(z);
            let mut conf: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
            // Renormalize away the last-ulp drift of exp.
            let s: f64 = conf.iter().sum();
            conf.iter_mut().for_each(|c| *c /= s);
            let loss = (lse - z[y]).max(0.0);
            rows.push(FeatureRow::new(conf, loss, argmax(z) == y, y)?);
        }
    }
    Ok(rows)
}

/// Query the frozen target on both splits.
pub fn build_attack_features(
    target: &Network,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<AttackInput, MiaError> {
    if train.is_empty() {
        return Err(MiaError::EmptyPool("member"));
    }
    if test.is_empty() {
        return Err(MiaError::EmptyPool("non-member"));
    }
    AttackInput::new(features_of(target, train)?, features_of(target, test)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Threshold,
    LogisticRegression,
    Knn,
    Mlp,
}

impl AttackKind {
    /// Fixed order, also the tie-break order of the suite.
    pub const ALL: [AttackKind; 4] =
        [AttackKind::Threshold, AttackKind::LogisticRegression, AttackKind::Knn, AttackKind::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Threshold => "threshold",
            AttackKind::LogisticRegression => "logistic-regression",
            AttackKind::Knn => "knn",
            AttackKind::Mlp => "mlp",
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackOptions {
    /// Fit one attacker per true class and pool the decisions.
    pub per_class: bool,
    pub knn_k: usize,
    pub logreg_iterations: usize,
    pub mlp_hidden: usize,
    pub mlp_epochs: usize,
    pub mlp_learning_rate: f64,
}

impl Default for AttackOptions {
    fn default() -> Self {
        Self {
            per_class: false,
            knn_k: 5,
            logreg_iterations: 300,
            mlp_hidden: 64,
            mlp_epochs: 100,
            mlp_learning_rate: 0.5,
        }
    }
}

/// Indices into the member / non-member pools for one attack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSplit {
    pub train_members: Vec<usize>,
    pub train_nonmembers: Vec<usize>,
    pub eval_members: Vec<usize>,
    pub eval_nonmembers: Vec<usize>,
}

fn halves(n: usize, seed: u64, pool: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::keyed(seed, Stream::Attack, pool));
    let eval = idx.split_off(n / 2);
    (idx, eval)
}

/// Seeded 50/50 split of each pool, then both halves balanced by truncating
/// the larger side (the pools are already shuffled, so truncation is a
/// uniform subsample).
pub fn attack_split(input: &AttackInput, seed: u64) -> AttackSplit {
    let (mut tm, mut em) = halves(input.members.len(), seed, 0);
    let (mut tn, mut en) = halves(input.nonmembers.len(), seed, 1);
    let t = tm.len().min(tn.len());
    tm.truncate(t);
    tn.truncate(t);
    let e = em.len().min(en.len());
    em.truncate(e);
    en.truncate(e);
    AttackSplit { train_members: tm, train_nonmembers: tn, eval_members: em, eval_nonmembers: en }
}

/// Outcome of one attack on attacker-eval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub kind: AttackKind,
    pub seed: u64,
    /// Membership scores on attacker-eval: members first, then non-members.
    pub scores: Vec<f64>,
    pub eval_members: usize,
    pub eval_nonmembers: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub advantage: f64,
}

/// Serializable summary of one attack (no scores).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub kind: AttackKind,
    pub seed: u64,
    pub tpr: f64,
    pub fpr: f64,
    pub advantage: f64,
}

impl From<&AttackResult> for AttackRecord {
    fn from(r: &AttackResult) -> Self {
        Self { kind: r.kind, seed: r.seed, tpr: r.tpr, fpr: r.fpr, advantage: r.advantage }
    }
}

/// Rows of one attack phase: vectors, membership labels and true classes.
pub(crate) struct Phase {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<bool>,
    pub class: Vec<usize>,
}

impl Phase {
    fn gather(input: &AttackInput, members: &[usize], nonmembers: &[usize]) -> Phase {
        let rows = members.iter().map(|&i| &input.members[i]).chain(nonmembers.iter().map(|&i| &input.nonmembers[i]));
        let (mut x, mut class) = (Vec::new(), Vec::new());
        for r in rows {
            x.push(r.vector());
            class.push(r.class);
        }
        let y = std::iter::repeat_n(true, members.len()).chain(std::iter::repeat_n(false, nonmembers.len())).collect();
        Phase { x, y, class }
    }

    fn subset(&self, keep: &[usize]) -> Phase {
        Phase {
            x: keep.iter().map(|&i| self.x[i].clone()).collect(),
            y: keep.iter().map(|&i| self.y[i]).collect(),
            class: keep.iter().map(|&i| self.class[i]).collect(),
        }
    }

    fn has_both_labels(&self) -> bool {
        self.y.iter().any(|&b| b) && self.y.iter().any(|&b| !b)
    }
}

pub fn run_single_attack(kind: AttackKind, input: &AttackInput, seed: u64) -> Result<AttackResult, MiaError> {
    run_single_attack_with(kind, input, seed, &AttackOptions::default())
}

pub fn run_single_attack_with(
    kind: AttackKind,
    input: &AttackInput,
    seed: u64,
    opts: &AttackOptions,
) -> Result<AttackResult, MiaError> {
    let split = attack_split(input, seed);
    let (train, eval) = phases(input, &split)?;
    attack_on(kind, &train, &eval, seed, opts)
}

fn phases(input: &AttackInput, split: &AttackSplit) -> Result<(Phase, Phase), MiaError> {
    if split.train_members.is_empty() {
        return Err(MiaError::DegenerateTrain("non-members"));
    }
    if split.train_nonmembers.is_empty() {
        return Err(MiaError::DegenerateTrain("members"));
    }
    if split.eval_members.is_empty() {
        return Err(MiaError::EmptyPool("attacker-eval"));
    }
    Ok((
        Phase::gather(input, &split.train_members, &split.train_nonmembers),
        Phase::gather(input, &split.eval_members, &split.eval_nonmembers),
    ))
}

fn attack_on(
    kind: AttackKind,
    train: &Phase,
    eval: &Phase,
    seed: u64,
    opts: &AttackOptions,
) -> Result<AttackResult, MiaError> {
    let decisions = if opts.per_class {
        per_class_decisions(kind, train, eval, seed, opts)?
    } else {
        attackers::fit_and_score(kind, train, eval, seed, opts)?
    };
    Ok(tally(kind, seed, eval, decisions))
}

/// One attacker per true class; classes whose attacker-train slice lacks
/// either label fall back to the pooled attacker.
fn per_class_decisions(
    kind: AttackKind,
    train: &Phase,
    eval: &Phase,
    seed: u64,
    opts: &AttackOptions,
) -> Result<Vec<(f64, bool)>, MiaError> {
    let pooled = attackers::fit_and_score(kind, train, eval, seed, opts)?;
    let mut out = pooled.clone();
    let classes = eval.class.iter().copied().max().map_or(0, |m| m + 1);
    for c in 0..classes {
        let ev: Vec<usize> = (0..eval.y.len()).filter(|&i| eval.class[i] == c).collect();
        if ev.is_empty() {
            continue;
        }
        let tr: Vec<usize> = (0..train.y.len()).filter(|&i| train.class[i] == c).collect();
        let tr_phase = train.subset(&tr);
        if !tr_phase.has_both_labels() {
            continue;
        }
        let scored = attackers::fit_and_score(kind, &tr_phase, &eval.subset(&ev), seed ^ (c as u64 + 1), opts)?;
        for (j, &i) in ev.iter().enumerate() {
            out[i] = scored[j];
        }
    }
    Ok(out)
}

fn tally(kind: AttackKind, seed: u64, eval: &Phase, decisions: Vec<(f64, bool)>) -> AttackResult {
    let (mut tp, mut fp, mut n1, mut n0) = (0, 0, 0, 0);
    for (&truth, &(_, guess)) in eval.y.iter().zip(&decisions) {
        if truth {
            n1 += 1;
            tp += usize::from(guess);
        } else {
            n0 += 1;
            fp += usize::from(guess);
        }
    }
    let tpr = tp as f64 / n1 as f64;
    let fpr = fp as f64 / n0 as f64;
    AttackResult {
        kind,
        seed,
        scores: decisions.into_iter().map(|(s, _)| s).collect(),
        eval_members: n1,
        eval_nonmembers: n0,
        true_positives: tp,
        false_positives: fp,
        tpr,
        fpr,
        advantage: tpr - fpr,
    }
}

/// All four attackers on one split; the strongest wins, ties going to the
/// earlier attacker in [`AttackKind::ALL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub best: AttackResult,
    pub all: Vec<AttackRecord>,
}

pub fn run_attack_suite(input: &AttackInput, seed: u64) -> Result<AttackResult, MiaError> {
    Ok(run_attack_suite_with(input, seed, &AttackOptions::default())?.best)
}

pub fn run_attack_suite_with(input: &AttackInput, seed: u64, opts: &AttackOptions) -> Result<SuiteResult, MiaError> {
    let split = attack_split(input, seed);
    let (train, eval) = phases(input, &split)?;
    let mut best: Option<AttackResult> = None;
    let mut all = Vec::with_capacity(4);
    for kind in AttackKind::ALL {
        let r = attack_on(kind, &train, &eval, seed, opts)?;
        all.push(AttackRecord::from(&r));
        if best.as_ref().is_none_or(|b| r.advantage > b.advantage) {
            best = Some(r);
        }
    }
    Ok(SuiteResult { best: best.expect("four attackers ran"), all })
}

/// `n` independent suite runs on one fixed feature table; repetition `r`
/// uses the derived seed `(seed, attack, r)`. Results keep repetition order.
pub fn repeat_attacks_on(
    input: &AttackInput,
    n: usize,
    seed: u64,
    opts: &AttackOptions,
) -> Result<Vec<SuiteResult>, MiaError> {
    if n < 2 {
        return Err(MiaError::TooFewRepeats(n));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|r| run_attack_suite_with(input, rng::derive_seed(seed, Stream::Attack, r), opts))
        .collect()
}

/// Best-attack advantage of each of `n` repetitions against `target`.
pub fn repeat_attacks(
    target: &Network,
    train: &LabeledDataset,
    test: &LabeledDataset,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, MiaError> {
    let input = build_attack_features(target, train, test)?;
    Ok(repeat_attacks_on(&input, n, seed, &AttackOptions::default())?.iter().map(|s| s.best.advantage).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(loss: f64) -> FeatureRow {
        let p = (-loss).exp();
        FeatureRow::new(vec![1.0 - p, p], loss, true, 0).unwrap()
    }

    #[test]
    fn feature_row_sorts_and_validates() {
        let r = FeatureRow::new(vec![0.1, 0.7, 0.2], 0.3, false, 2).unwrap();
        assert_eq!(r.confidences, vec![0.7, 0.2, 0.1]);
        assert_eq!(r.vector(), vec![0.7, 0.2, 0.1, 0.3, 0.0]);
        assert!(FeatureRow::new(vec![0.5, 0.6], 0.3, false, 0).is_err());
        assert!(FeatureRow::new(vec![0.5, 0.5], -0.1, false, 0).is_err());
    }

    #[test]
    fn split_is_disjoint_and_balanced() {
        let input =
            AttackInput::new((0..101).map(|i| row(i as f64 * 0.01)).collect(), (0..40).map(|_| row(1.0)).collect())
                .unwrap();
        let s = attack_split(&input, 5);
        assert_eq!(s.eval_members.len(), s.eval_nonmembers.len());
        assert_eq!(s.train_members.len(), s.train_nonmembers.len());
        assert_eq!(s.eval_nonmembers.len(), 20);
        for i in &s.eval_members {
            assert!(!s.train_members.contains(i));
        }
        for i in &s.eval_nonmembers {
            assert!(!s.train_nonmembers.contains(i));
        }
        assert_eq!(s, attack_split(&input, 5));
    }

    #[test]
    fn too_few_repeats() {
        let input = AttackInput::new(vec![row(0.1); 4], vec![row(0.2); 4]).unwrap();
        assert!(matches!(repeat_attacks_on(&input, 1, 0, &AttackOptions::default()), Err(MiaError::TooFewRepeats(1))));
    }

    #[test]
    fn single_rows_cannot_train() {
        let input = AttackInput::new(vec![row(0.1)], vec![row(0.2)]).unwrap();
        assert!(matches!(run_single_attack(AttackKind::Threshold, &input, 0), Err(MiaError::DegenerateTrain(_))));
    }
}
