//! The four attackers. Each is fit on attacker-train and returns a
//! `(score, is_member_guess)` pair per attacker-eval row; higher scores mean
//! "more likely a member".

use super::{AttackKind, AttackOptions, MiaError, Phase};
use crate::data::ClassWeights;
use crate::nn::{build_network, softmax, weighted_cross_entropy, Activation, LayerSpec, NetworkSpec};
use crate::optim::OptimizerState;
use crate::tensor::Tensor;

/// Index of the loss entry in [`FeatureRow::vector`](super::FeatureRow::vector).
fn loss_index(x: &[f64]) -> usize {
    x.len() - 2
}

pub(crate) fn fit_and_score(
    kind: AttackKind,
    train: &Phase,
    eval: &Phase,
    seed: u64,
    opts: &AttackOptions,
) -> Result<Vec<(f64, bool)>, MiaError> {
    match kind {
        AttackKind::Threshold => Ok(threshold(train, eval)),
        AttackKind::LogisticRegression => Ok(logistic_regression(train, eval, opts.logreg_iterations)),
        AttackKind::Knn => Ok(knn(train, eval, opts.knn_k)),
        AttackKind::Mlp => mlp(train, eval, seed, opts),
    }
}

/// Predict "member" when `loss ≤ t`, with `t` the midpoint cutoff that
/// maximizes `TPR − FPR` on attacker-train (smallest such cutoff on ties).
fn threshold(train: &Phase, eval: &Phase) -> Vec<(f64, bool)> {
    let li = loss_index(&train.x[0]);
    let mut pts: Vec<(f64, bool)> = train.x.iter().zip(&train.y).map(|(x, &y)| (x[li], y)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n1 = pts.iter().filter(|p| p.1).count() as f64;
    let n0 = pts.len() as f64 - n1;
    // Cutoff below every point: nothing flagged, advantage 0.
    let mut best_t = pts[0].0 - 1.0;
    let mut best_adv = 0.0;
    let (mut tp, mut fp) = (0.0, 0.0);
    for i in 0..pts.len() {
        if pts[i].1 {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        // Only cut between distinct values.
        if i + 1 < pts.len() && pts[i + 1].0 == pts[i].0 {
            continue;
        }
        let adv = tp / n1 - fp / n0;
        if adv > best_adv {
            best_adv = adv;
            best_t = if i + 1 < pts.len() { 0.5 * (pts[i].0 + pts[i + 1].0) } else { pts[i].0 + 1.0 };
        }
    }
    eval.x.iter().map(|x| (-x[li], x[li] <= best_t)).collect()
}

/// Per-feature mean and standard deviation of attacker-train.
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &[Vec<f64>]) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for r in x {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for r in x {
            for j in 0..d {
                var[j] += (r[j] - mean[j]).powi(2) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, scale }
    }

    fn apply(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter().map(|r| r.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.scale[j]).collect()).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// L2-regularized logistic regression by full-batch gradient descent on
/// standardized features.
fn logistic_regression(train: &Phase, eval: &Phase, iterations: usize) -> Vec<(f64, bool)> {
    const LR: f64 = 0.3;
    const L2: f64 = 1e-4;
    let st = Standardizer::fit(&train.x);
    let xt = st.apply(&train.x);
    let d = xt[0].len();
    let n = xt.len() as f64;
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for _ in 0..iterations {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, &y) in xt.iter().zip(&train.y) {
            let z = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let r = sigmoid(z) - if y { 1.0 } else { 0.0 };
            gw.iter_mut().zip(x).for_each(|(g, v)| *g += r * v);
            gb += r;
        }
        for j in 0..d {
            w[j] -= LR * (gw[j] / n + L2 * w[j]);
        }
        b -= LR * gb / n;
    }
    st.apply(&eval.x)
        .iter()
        .map(|x| {
            let p = sigmoid(b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>());
            (p, p > 0.5)
        })
        .collect()
}

/// Fraction of members among the `k` nearest attacker-train rows
/// (Euclidean distance on standardized features, ties by index).
fn knn(train: &Phase, eval: &Phase, k: usize) -> Vec<(f64, bool)> {
    let st = Standardizer::fit(&train.x);
    let xt = st.apply(&train.x);
    let k = k.clamp(1, xt.len());
    st.apply(&eval.x)
        .iter()
        .map(|q| {
            let mut d: Vec<(f64, usize)> = xt
                .iter()
                .enumerate()
                .map(|(i, x)| (x.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
                .collect();
            d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let members = d[..k].iter().filter(|&&(_, i)| train.y[i]).count();
            let s = members as f64 / k as f64;
            (s, s > 0.5)
        })
        .collect()
}

/// One hidden tanh layer trained by full-batch gradient descent, reusing
/// the network engine.
fn mlp(train: &Phase, eval: &Phase, seed: u64, opts: &AttackOptions) -> Result<Vec<(f64, bool)>, MiaError> {
    let st = Standardizer::fit(&train.x);
    let d = train.x[0].len();
    let h = opts.mlp_hidden.max(1);
    let spec = NetworkSpec::new(
        vec![d],
        Activation::Tanh,
        vec![LayerSpec::dense(d, h), LayerSpec::Activation, LayerSpec::dense(h, 2)],
    );
    let mut net = build_network(&spec, seed)?;
    let to_tensor = |x: Vec<Vec<f64>>| Tensor::from_rows(&x).map_err(|e| MiaError::InvalidFeature(e.to_string()));
    let xt = to_tensor(st.apply(&train.x))?;
    let labels: Vec<usize> = train.y.iter().map(|&b| usize::from(b)).collect();
    let weights = ClassWeights::uniform(2);
    let mut opt = OptimizerState::sgd(opts.mlp_learning_rate).expect("positive learning rate");
    let n = labels.len() as f64;
    for _ in 0..opts.mlp_epochs {
        let (logits, cache) = net.forward(&xt)?;
        let out = weighted_cross_entropy(&logits, &labels, &weights)?;
        let grad: Vec<f64> = net.backward_sum(&cache, &out.per_sample_dlogits)?.into_iter().map(|g| g / n).collect();
        opt.step(&mut net, &grad).expect("gradient length matches");
    }
    let probs = softmax(&net.logits(&to_tensor(st.apply(&eval.x))?)?);
    Ok((0..probs.rows()).map(|i| (probs.row(i)[1], probs.row(i)[1] > 0.5)).collect())
}
