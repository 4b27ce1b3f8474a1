//! Rényi accounting for the subsampled Gaussian mechanism.
//!
//! One DP-SGD step with sampling rate `q` and noise multiplier `σ` is a
//! Poisson-subsampled Gaussian mechanism. Its Rényi divergence of order `α` is
//! `log(A_α) / (α − 1)` with
//!
//! ```text
//! A_α = E_{z ~ N(0, σ²)} [ ((1 − q) + q · exp((2z − 1) / (2σ²)))^α ]
//! ```
//!
//! Integer orders use the binomial expansion of `A_α`; fractional orders use
//! the two-sided erfc series. Both are evaluated in log space. Composition over
//! `T` steps multiplies each order's divergence by `T`, and the conversion to
//! `(ε, δ)` takes `min_α [rdp(α) + log(1/δ) / (α − 1)]`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AccountantError {
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("RDP curve has no orders")]
    EmptyCurve,
    #[error("target ε = {target} unreachable for σ in [{lo}, {hi}] (ε at σ = {hi} is {best})")]
    Unreachable { target: f64, lo: f64, hi: f64, best: f64 },
}

/// Target or achieved `(ε, δ)`. `ε = ∞` marks a non-private run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    #[serde(with = "crate::serde_ext::f64_or_inf")]
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self, AccountantError> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(AccountantError::Domain(format!("epsilon {epsilon} must be >= 0")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(AccountantError::Domain(format!("delta {delta} must lie in [0, 1)")));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn non_private(delta: f64) -> Self {
        Self { epsilon: f64::INFINITY, delta }
    }

    pub fn is_private(&self) -> bool {
        self.epsilon.is_finite()
    }
}

/// Realization of a budget: sampling rate, noise multiplier, step count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub q: f64,
    pub sigma: f64,
    pub steps: u64,
}

impl MechanismParams {
    /// Minibatch training: `q = B / n` and `T = epochs · ceil(n / B)`.
    pub fn minibatch(n: usize, batch_size: usize, epochs: usize, sigma: f64) -> Self {
        assert!(n > 0 && batch_size > 0, "empty dataset or batch");
        let b = batch_size.min(n);
        Self { q: b as f64 / n as f64, sigma, steps: (epochs * n.div_ceil(b)) as u64 }
    }

    pub fn epsilon(&self, delta: f64) -> Result<Conversion, AccountantError> {
        let curve = RdpCurve::subsampled_gaussian(self.q, self.sigma, &default_orders())?;
        rdp_to_dp(&curve.compose(self.steps), delta)
    }
}

/// Orders above 64 appended to the base grid. Without them the conversion
/// term `log(1/δ) / (α − 1)` alone keeps ε above `log(1/δ) / 63` (about 0.18
/// at δ = 1e-5), so small targets such as ε = 0.1 could never be met.
pub const HIGH_ORDERS: [u32; 14] = [72, 80, 96, 112, 128, 160, 192, 256, 320, 384, 512, 640, 768, 1024];

/// Default order grid: `1 + x/10` for `x = 1..=99`, integers `12..=64`, then
/// [`HIGH_ORDERS`].
pub fn default_orders() -> Vec<f64> {
    (1..=99)
        .map(|x| (10 + x) as f64 / 10.0)
        .chain((12..=64).map(f64::from))
        .chain(HIGH_ORDERS.iter().map(|&a| f64::from(a)))
        .collect()
}

/// Rényi divergences at a list of orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub values: Vec<f64>,
}

impl RdpCurve {
    pub fn new(orders: Vec<f64>, values: Vec<f64>) -> Result<Self, AccountantError> {
        if orders.len() != values.len() {
            return Err(AccountantError::Domain(format!("{} orders but {} values", orders.len(), values.len())));
        }
        if let Some(o) = orders.iter().find(|&&o| o.is_nan() || o <= 1.0) {
            return Err(AccountantError::Domain(format!("order {o} must exceed 1")));
        }
        Ok(Self { orders, values })
    }

    /// Single-step curve of the subsampled Gaussian.
    pub fn subsampled_gaussian(q: f64, sigma: f64, orders: &[f64]) -> Result<Self, AccountantError> {
        let values = orders.iter().map(|&a| rdp_subsampled_gaussian(q, sigma, a)).collect::<Result<_, _>>()?;
        Ok(Self { orders: orders.to_vec(), values })
    }

    /// `T`-fold composition: every divergence scaled by `steps`.
    pub fn compose(&self, steps: u64) -> RdpCurve {
        let t = steps as f64;
        let values = self.values.iter().map(|&v| if steps == 0 { 0.0 } else { v * t }).collect();
        RdpCurve { orders: self.orders.clone(), values }
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }
}

/// An `(ε, δ)` conversion together with the order that attained the minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conversion {
    #[serde(with = "crate::serde_ext::f64_or_inf")]
    pub epsilon: f64,
    pub delta: f64,
    pub order: f64,
}

/// `ε = min_α [rdp(α) + log(1/δ) / (α − 1)]`.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<Conversion, AccountantError> {
    if curve.is_empty() {
        return Err(AccountantError::EmptyCurve);
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(AccountantError::Domain(format!("delta {delta} must lie in (0, 1)")));
    }
    let log_inv_delta = -delta.ln();
    let mut best = Conversion { epsilon: f64::INFINITY, delta, order: curve.orders[0] };
    for (&a, &r) in curve.orders.iter().zip(&curve.values) {
        let eps = r + log_inv_delta / (a - 1.0);
        if eps < best.epsilon {
            best = Conversion { epsilon: eps, delta, order: a };
        }
    }
    Ok(best)
}

/// Rényi divergence of order `order` for one subsampled-Gaussian step.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, order: f64) -> Result<f64, AccountantError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(AccountantError::Domain(format!("sampling rate {q} outside (0, 1]")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(AccountantError::Domain(format!("noise multiplier {sigma} must be positive")));
    }
    if !(order > 1.0 && order.is_finite()) {
        return Err(AccountantError::Domain(format!("order {order} must exceed 1")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return Ok(order / (2.0 * sigma * sigma));
    }
    let log_a = if order.fract() == 0.0 && order <= 1e6 {
        log_a_integer(q, sigma, order as u64)
    } else {
        log_a_fractional(q, sigma, order)
    };
    Ok(log_a / (order - 1.0))
}

/// `log(exp(a) + exp(b))`.
fn log_add(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log(exp(a) − exp(b))` for `a ≥ b`; `−∞` if the difference underflows.
fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// `log(e^x − 1)` for `x > 0`.
fn log_expm1(x: f64) -> f64 {
    if x > 40.0 {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

fn ln_choose_int(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Integer `α`: `A_α = Σ_i C(α, i) q^i (1−q)^{α−i} exp((i² − i) / (2σ²))`.
/// The binomial weights sum to one, so `A_α = 1 + S` with
/// `S = Σ_{i≥2} C(α, i) q^i (1−q)^{α−i} expm1((i² − i) / (2σ²))`, a sum of
/// positive terms; this keeps full relative precision when `A_α ≈ 1`.
fn log_a_integer(q: f64, sigma: f64, alpha: u64) -> f64 {
    let log_q = q.ln();
    let log_1mq = (-q).ln_1p();
    let two_s2 = 2.0 * sigma * sigma;
    let mut log_s = f64::NEG_INFINITY;
    for i in 2..=alpha {
        let fi = i as f64;
        let term =
            ln_choose_int(alpha, i) + fi * log_q + (alpha - i) as f64 * log_1mq + log_expm1((fi * fi - fi) / two_s2);
        log_s = log_add(log_s, term);
    }
    // log(1 + S)
    if log_s > 0.0 {
        log_s + (-log_s).exp().ln_1p()
    } else {
        log_s.exp().ln_1p()
    }
}

/// `log |Γ(x)|` for any non-pole real `x` (reflection for `x < 0`).
fn ln_abs_gamma(x: f64) -> f64 {
    if x > 0.0 {
        ln_gamma(x)
    } else {
        let pi = std::f64::consts::PI;
        pi.ln() - (pi * x).sin().abs().ln() - ln_gamma(1.0 - x)
    }
}

/// Sign and log-magnitude of the generalized binomial `C(α, i)`.
fn ln_choose_real(alpha: f64, i: u64) -> (f64, f64) {
    let fi = i as f64;
    let rest = alpha - fi + 1.0;
    let mag = ln_gamma(alpha + 1.0) - ln_gamma(fi + 1.0) - ln_abs_gamma(rest);
    // Γ(rest) is negative when rest ∈ (−2m−1, −2m) for m ≥ 0.
    let sign = if rest > 0.0 || (rest.floor() as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    (sign, mag)
}

fn log_erfc(x: f64) -> f64 {
    // Past x ≈ 26 erfc is subnormal and loses its significant digits, so
    // switch to the asymptotic expansion well before that.
    if x < 20.0 {
        erfc(x).ln()
    } else {
        let x2 = x * x;
        -0.5 * std::f64::consts::PI.ln() - x.ln() - x2 - 0.5 / x2 + 0.625 / (x2 * x2) - 37.0 / 24.0 / (x2 * x2 * x2)
            + 353.0 / 64.0 / (x2 * x2 * x2 * x2)
    }
}

/// Fractional `α`: split the expectation at `z0 = σ² log(1/q − 1) + 1/2`,
/// where `(1−q)` and `q·exp(…)` cross, and expand each side with the
/// generalized binomial series (signed terms, erfc tail weights).
///
/// Past `i > α + 1` the terms alternate in sign and decay only polynomially,
/// so the sum is closed with the average of the last two partial sums.
fn log_a_fractional(q: f64, sigma: f64, alpha: f64) -> f64 {
    const MAX_TERMS: u64 = 50_000;
    let mut pos = f64::NEG_INFINITY;
    let mut neg = f64::NEG_INFINITY;
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let log_q = q.ln();
    let log_1mq = (-q).ln_1p();
    let two_s2 = 2.0 * sigma * sigma;
    let sqrt2_sigma = std::f64::consts::SQRT_2 * sigma;
    let half_ln = 0.5f64.ln();
    let alternating_from = alpha.ceil() as u64 + 1;
    let mut last = (1.0, f64::NEG_INFINITY);
    for i in 0..MAX_TERMS {
        let fi = i as f64;
        let (sign, log_coef) = ln_choose_real(alpha, i);
        let j = alpha - fi;
        let log_t0 = log_coef + fi * log_q + j * log_1mq;
        let log_t1 = log_coef + j * log_q + fi * log_1mq;
        let log_e0 = half_ln + log_erfc((fi - z0) / sqrt2_sigma);
        let log_e1 = half_ln + log_erfc((z0 - j) / sqrt2_sigma);
        let log_s = log_add(log_t0 + (fi * fi - fi) / two_s2 + log_e0, log_t1 + (j * j - j) / two_s2 + log_e1);
        if sign > 0.0 {
            pos = log_add(pos, log_s);
        } else {
            neg = log_add(neg, log_s);
        }
        last = (sign, log_s);
        // The averaged tail error is about |term| · (α + 2) / i.
        if i > alternating_from && log_s + ((alpha + 2.0) / fi).ln() < -45.0 {
            break;
        }
    }
    let (sign, log_s) = last;
    if sign > 0.0 {
        neg = log_add(neg, log_s + half_ln);
    } else {
        pos = log_add(pos, log_s + half_ln);
    }
    log_sub(pos, neg)
}

/// Result of [`calibrate_noise`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sigma: f64,
    pub epsilon: f64,
    pub order: f64,
}

pub const SIGMA_BRACKET: (f64, f64) = (1e-2, 1e4);

/// Smallest noise multiplier (up to a 1% band on ε) whose accounted ε does not
/// exceed `target.epsilon` after `steps` steps at sampling rate `q`.
///
/// Bisects `log σ` over [`SIGMA_BRACKET`] until the achieved ε lies in
/// `[0.99·ε*, ε*]`. The returned σ always satisfies `ε ≤ ε*`. If even the
/// smallest σ of the bracket stays under the target, that σ is returned.
pub fn calibrate_noise(target: PrivacyBudget, q: f64, steps: u64) -> Result<Calibration, AccountantError> {
    // ε* = 0 passes through and is reported unreachable below.
    if !target.epsilon.is_finite() {
        return Err(AccountantError::Domain(format!("target epsilon {} must be finite", target.epsilon)));
    }
    if steps == 0 {
        return Err(AccountantError::Domain("calibration needs at least one step".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(AccountantError::Domain(format!("sampling rate {q} outside (0, 1]")));
    }
    let orders = default_orders();
    let eval = |sigma: f64| -> Result<Conversion, AccountantError> {
        rdp_to_dp(&RdpCurve::subsampled_gaussian(q, sigma, &orders)?.compose(steps), target.delta)
    };
    let (lo_bound, hi_bound) = SIGMA_BRACKET;
    let at_hi = eval(hi_bound)?;
    if at_hi.epsilon > target.epsilon {
        return Err(AccountantError::Unreachable {
            target: target.epsilon,
            lo: lo_bound,
            hi: hi_bound,
            best: at_hi.epsilon,
        });
    }
    let at_lo = eval(lo_bound)?;
    if at_lo.epsilon <= target.epsilon {
        return Ok(Calibration { sigma: lo_bound, epsilon: at_lo.epsilon, order: at_lo.order });
    }
    let (mut lo, mut hi, mut best) = (lo_bound.ln(), hi_bound.ln(), at_hi);
    for _ in 0..200 {
        if best.epsilon >= 0.99 * target.epsilon {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let c = eval(mid.exp())?;
        if c.epsilon <= target.epsilon {
            hi = mid;
            best = c;
        } else {
            lo = mid;
        }
    }
    Ok(Calibration { sigma: hi.exp(), epsilon: best.epsilon, order: best.order })
}
