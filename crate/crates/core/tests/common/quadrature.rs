//! Brute-force numerical integration of the subsampled-Gaussian Rényi
//! moment, independent of the series used by the library:
//!
//! A_α = ∫ φ_σ(z) · ((1 − q) + q · exp((2z − 1) / (2σ²)))^α dz
//!
//! evaluated with a fine trapezoid rule. The integrand is smooth and decays
//! like a Gaussian, so the trapezoid rule converges geometrically.

fn log_add(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn grid(sigma: f64, alpha: f64) -> (f64, f64, usize) {
    let lo = -40.0 * sigma - 1.0;
    let hi = alpha + 40.0 * sigma + 1.0;
    let n = ((hi - lo) / (sigma / 100.0)).ceil() as usize;
    (lo, (hi - lo) / n as f64, n)
}

fn log_phi(z: f64, sigma: f64) -> f64 {
    -0.5 * (z / sigma).powi(2) - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// `log A_α` by direct integration of the log-integrand.
fn log_moment_direct(q: f64, sigma: f64, alpha: f64) -> f64 {
    let (lo, h, n) = grid(sigma, alpha);
    let log_1mq = (-q).ln_1p();
    let log_terms: Vec<f64> = (0..=n)
        .map(|k| {
            let z = lo + k as f64 * h;
            let u = q.ln() + (2.0 * z - 1.0) / (2.0 * sigma * sigma);
            let w = if k == 0 || k == n { 0.5f64.ln() } else { 0.0 };
            w + log_phi(z, sigma) + alpha * log_add(log_1mq, u)
        })
        .collect();
    let m = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + log_terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln() + h.ln()
}

/// `A_α − 1` as `∫ φ · expm1(α · log1p(q (r − 1)))`, which keeps relative
/// precision when `A_α` is within rounding of 1.
fn moment_minus_one(q: f64, sigma: f64, alpha: f64) -> f64 {
    let (lo, h, n) = grid(sigma, alpha);
    let mut acc = 0.0;
    for k in 0..=n {
        let z = lo + k as f64 * h;
        let rm1 = ((2.0 * z - 1.0) / (2.0 * sigma * sigma)).exp_m1();
        let w = alpha * (q * rm1).ln_1p();
        let lp = log_phi(z, sigma);
        let term = if w > 30.0 { (lp + w + (-(-w).exp()).ln_1p()).exp() } else { lp.exp() * w.exp_m1() };
        acc += if k == 0 || k == n { 0.5 * term } else { term };
    }
    acc * h
}

pub fn log_moment(q: f64, sigma: f64, alpha: f64) -> f64 {
    let direct = log_moment_direct(q, sigma, alpha);
    if direct < 1e-3 {
        moment_minus_one(q, sigma, alpha).ln_1p()
    } else {
        direct
    }
}

/// Single-step Rényi divergence by quadrature.
pub fn rdp(q: f64, sigma: f64, alpha: f64) -> f64 {
    log_moment(q, sigma, alpha) / (alpha - 1.0)
}

/// The same order grid as the library, rebuilt here so the oracle does not
/// depend on library code.
pub fn orders() -> Vec<f64> {
    let high = [72, 80, 96, 112, 128, 160, 192, 256, 320, 384, 512, 640, 768, 1024];
    (1..=99).map(|x| (10 + x) as f64 / 10.0).chain((12..=64).chain(high).map(f64::from)).collect()
}

pub fn rdp_curve(q: f64, sigma: f64) -> Vec<f64> {
    orders().iter().map(|&a| rdp(q, sigma, a)).collect()
}

/// `(ε, δ)` conversion of a `steps`-fold composed oracle curve.
pub fn epsilon(curve: &[f64], steps: f64, delta: f64) -> f64 {
    orders().iter().zip(curve).map(|(&a, &r)| steps * r + (1.0 / delta).ln() / (a - 1.0)).fold(f64::INFINITY, f64::min)
}
