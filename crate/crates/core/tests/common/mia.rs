//! Synthetic attack inputs with known optimal advantage.

use dp_audit::mia::{AttackInput, FeatureRow};
use dp_audit::rng::{keyed, Stream};
use rand_distr::{Distribution, Normal};

/// Row whose two-class confidences are consistent with `loss`.
pub fn row_with_loss(loss: f64) -> FeatureRow {
    let p = (-loss).exp();
    FeatureRow::new(vec![p, 1.0 - p], loss, p >= 0.5, 0).expect("valid row")
}

/// Members' losses ~ N(mu1, 1), non-members' ~ N(mu0, 1). Means are offset
/// far from 0 so losses stay non-negative (clamped otherwise).
pub fn gaussian_pools(n: usize, mu1: f64, mu0: f64, seed: u64) -> AttackInput {
    let mut rng = keyed(seed, Stream::Synthetic, 99);
    let draw = |mu: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        let d = Normal::new(mu, 1.0).unwrap();
        (0..n).map(|_| row_with_loss(d.sample(rng).max(0.0))).collect::<Vec<_>>()
    };
    let members = draw(mu1, &mut rng);
    let nonmembers = draw(mu0, &mut rng);
    AttackInput::new(members, nonmembers).unwrap()
}
