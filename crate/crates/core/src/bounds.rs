//! Randomized response as a reference mechanism with exact ε.
//!
//! Releasing a bit truthfully with probability `p = e^ε / (1 + e^ε)` is
//! exactly ε-DP, and guessing the released bit is the Bayes-optimal
//! membership attack, with advantage `2p − 1 = (e^ε − 1)/(e^ε + 1)`. Playing
//! the membership game and comparing against `e^ε − 1 + δ` separates "the
//! bound holds" from "the bound is loose".

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::dp_bound;
use crate::rng::{self, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum BoundsError {
    #[error("epsilon must be >= 0, got {0}")]
    Epsilon(f64),
    #[error("the membership game needs at least {min} trials, got {got}")]
    TooFewTrials { min: u64, got: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizedResponse {
    epsilon: f64,
    truth_probability: f64,
}

impl RandomizedResponse {
    /// `ε = ∞` degenerates to always telling the truth.
    pub fn new(epsilon: f64) -> Result<Self, BoundsError> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(BoundsError::Epsilon(epsilon));
        }
        // e^ε/(1+e^ε), written to stay finite for large ε.
        let p = 1.0 / (1.0 + (-epsilon).exp());
        Ok(Self { epsilon, truth_probability: p })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn truth_probability(&self) -> f64 {
        self.truth_probability
    }

    pub fn release(&self, bit: bool, rng: &mut impl Rng) -> bool {
        if rng.random_bool(self.truth_probability) {
            bit
        } else {
            !bit
        }
    }
}

/// `(e^ε − 1)/(e^ε + 1) = tanh(ε/2)`.
pub fn optimal_rr_advantage(epsilon: f64) -> Result<f64, BoundsError> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(BoundsError::Epsilon(epsilon));
    }
    Ok((epsilon / 2.0).tanh())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameTranscript {
    pub hidden: Vec<bool>,
    pub released: Vec<bool>,
    pub guesses: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub trials: u64,
    pub members: u64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub tpr: f64,
    pub fpr: f64,
    pub advantage: f64,
    /// `sqrt(tpr(1 − tpr)/n₁ + fpr(1 − fpr)/n₀)`.
    pub std_error: f64,
}

pub const MIN_TRIALS: u64 = 1000;

/// Bayes rule for `p > 1/2`: the released bit is the more likely hidden bit.
fn bayes_guess(released: bool) -> bool {
    released
}

/// Play `trials` rounds: a uniform hidden membership bit, one release, one
/// guess from the release alone.
pub fn run_membership_game(mech: &RandomizedResponse, trials: u64, seed: u64) -> Result<GameOutcome, BoundsError> {
    Ok(play(mech, trials, seed, false)?.0)
}

/// As [`run_membership_game`], also returning the full transcript.
pub fn run_membership_game_with_transcript(
    mech: &RandomizedResponse,
    trials: u64,
    seed: u64,
) -> Result<(GameOutcome, GameTranscript), BoundsError> {
    let (o, t) = play(mech, trials, seed, true)?;
    Ok((o, t.expect("transcript requested")))
}

fn play(
    mech: &RandomizedResponse,
    trials: u64,
    seed: u64,
    keep: bool,
) -> Result<(GameOutcome, Option<GameTranscript>), BoundsError> {
    if trials < MIN_TRIALS {
        return Err(BoundsError::TooFewTrials { min: MIN_TRIALS, got: trials });
    }
    let mut rng = rng::keyed(seed, Stream::Game, 0);
    let mut transcript = keep.then(|| GameTranscript {
        hidden: Vec::with_capacity(trials as usize),
        released: Vec::with_capacity(trials as usize),
        guesses: Vec::with_capacity(trials as usize),
    });
    let (mut members, mut tp, mut fp) = (0u64, 0u64, 0u64);
    for _ in 0..trials {
        let b: bool = rng.random();
        let out = mech.release(b, &mut rng);
        let guess = bayes_guess(out);
        if b {
            members += 1;
            tp += u64::from(guess);
        } else {
            fp += u64::from(guess);
        }
        if let Some(t) = transcript.as_mut() {
            t.hidden.push(b);
            t.released.push(out);
            t.guesses.push(guess);
        }
    }
    let n1 = members.max(1) as f64;
    let n0 = (trials - members).max(1) as f64;
    let tpr = tp as f64 / n1;
    let fpr = fp as f64 / n0;
    let std_error = (tpr * (1.0 - tpr) / n1 + fpr * (1.0 - fpr) / n0).sqrt();
    let outcome = GameOutcome {
        trials,
        members,
        true_positives: tp,
        false_positives: fp,
        tpr,
        fpr,
        advantage: tpr - fpr,
        std_error,
    };
    Ok((outcome, transcript))
}

/// Closed form, game result and the DP bound for one ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrBoundReport {
    pub epsilon: f64,
    pub delta: f64,
    pub closed_form: f64,
    pub empirical: f64,
    pub std_error: f64,
    pub bound: f64,
    /// Empirical advantage ≤ bound.
    pub satisfied: bool,
    /// Empirical advantage within 3 standard errors of the closed form.
    pub consistent: bool,
}

pub fn rr_bound_report(epsilon: f64, delta: f64, trials: u64, seed: u64) -> Result<RrBoundReport, BoundsError> {
    let mech = RandomizedResponse::new(epsilon)?;
    let game = run_membership_game(&mech, trials, seed)?;
    let closed_form = optimal_rr_advantage(epsilon)?;
    let bound = dp_bound(epsilon, delta).map_err(|_| BoundsError::Epsilon(epsilon))?;
    Ok(RrBoundReport {
        epsilon,
        delta,
        closed_form,
        empirical: game.advantage,
        std_error: game.std_error,
        bound,
        satisfied: game.advantage <= bound,
        consistent: (game.advantage - closed_form).abs() <= 3.0 * game.std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert_eq!(optimal_rr_advantage(0.0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((optimal_rr_advantage(1.0).unwrap() - (e - 1.0) / (e + 1.0)).abs() < 1e-15);
        assert!((optimal_rr_advantage(1.0).unwrap() - 0.46212).abs() < 1e-5);
    }

    #[test]
    fn infinite_epsilon_tells_the_truth() {
        let m = RandomizedResponse::new(f64::INFINITY).unwrap();
        assert_eq!(m.truth_probability(), 1.0);
        let mut rng = rng::keyed(1, Stream::Game, 0);
        assert!((0..1000).all(|i| m.release(i % 3 == 0, &mut rng) == (i % 3 == 0)));
    }

    #[test]
    fn transcript_is_reproducible() {
        let m = RandomizedResponse::new(0.5).unwrap();
        let a = run_membership_game_with_transcript(&m, 2000, 9).unwrap();
        assert_eq!(a, run_membership_game_with_transcript(&m, 2000, 9).unwrap());
        assert_eq!(a.1.guesses, a.1.released);
        assert!(run_membership_game(&m, 999, 9).is_err());
    }
}
