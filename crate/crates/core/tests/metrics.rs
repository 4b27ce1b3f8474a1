use dp_audit::metrics::{
    bound_check, confidence_interval, confidence_interval_with, dp_bound, membership_advantage, utility_scores,
    Averaging, IntervalMethod,
};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[test]
fn bound_at_unit_epsilon() {
    let b = dp_bound(1.0, 1e-4).unwrap();
    assert!((b - 1.7184).abs() <= 1e-4, "{b}");
    assert_eq!(dp_bound(0.0, 0.0).unwrap(), 0.0);
    assert!(dp_bound(-1.0, 0.0).is_err());
    assert!(dp_bound(1.0, 1.0).is_err());
}

#[test]
fn t_interval_matches_textbook_formula() {
    let xs = [0.21, 0.25, 0.19, 0.23, 0.22, 0.24, 0.20];
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 1.0).unwrap().inverse_cdf(0.975);
    let ci = confidence_interval(&xs, 0.95).unwrap();
    assert!((ci.lower - (mean - t * sd / n.sqrt())).abs() < 1e-12);
    assert!((ci.upper - (mean + t * sd / n.sqrt())).abs() < 1e-12);
    assert!(confidence_interval(&[0.1], 0.95).is_err());
    assert!(confidence_interval(&xs, 1.0).is_err());
}

#[test]
fn bound_check_flags_violations() {
    let ci = confidence_interval(&[0.5, 0.6, 0.55], 0.95).unwrap();
    assert!(!bound_check(0.1, 1e-5, ci).unwrap().satisfied);
    assert!(bound_check(1.0, 1e-5, ci).unwrap().satisfied);
    assert!(bound_check(f64::INFINITY, 1e-5, ci).unwrap().satisfied);
}

/// Precision, recall and F1 counted straight from the pairs.
fn naive_f1(pred: &[usize], labels: &[usize], class: usize) -> f64 {
    let tp = pred.iter().zip(labels).filter(|&(&p, &y)| p == class && y == class).count() as f64;
    let fp = pred.iter().zip(labels).filter(|&(&p, &y)| p == class && y != class).count() as f64;
    let fneg = pred.iter().zip(labels).filter(|&(&p, &y)| p != class && y == class).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fneg)
    }
}

#[test]
fn f1_worked_example() {
    let labels = [0, 0, 0, 1, 1, 2];
    let pred = [0, 1, 0, 1, 2, 2];
    let s = utility_scores(&pred, &labels, 3, Averaging::Macro).unwrap();
    assert!((s.accuracy - 4.0 / 6.0).abs() < 1e-15);
    // Class 0: p 1, r 2/3. Class 1: p 1/2, r 1/2. Class 2: p 1/2, r 1.
    let expect = (0.8 + 0.5 + 2.0 / 3.0) / 3.0;
    assert!((s.f1 - expect).abs() < 1e-12);
    let b = utility_scores(&pred, &labels, 3, Averaging::Binary { positive: 1 }).unwrap();
    assert!((b.f1 - 0.5).abs() < 1e-15);
    assert!(utility_scores(&[0], &[0, 1], 2, Averaging::Macro).is_err());
    assert!(utility_scores(&[3], &[0], 2, Averaging::Macro).is_err());
}

#[test]
fn degenerate_predictor_has_zero_f1() {
    let labels = [0, 0, 1, 1];
    let s = utility_scores(&[0, 0, 0, 0], &labels, 2, Averaging::Binary { positive: 1 }).unwrap();
    assert_eq!(s.f1, 0.0);
    assert_eq!(s.accuracy, 0.5);
}

#[test]
fn bootstrap_is_seeded() {
    let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 0.1 + 0.2).collect();
    let m = IntervalMethod::Bootstrap { resamples: 2000, seed: 9 };
    let a = confidence_interval_with(&xs, 0.95, m).unwrap();
    assert_eq!(a, confidence_interval_with(&xs, 0.95, m).unwrap());
    let t = confidence_interval(&xs, 0.95).unwrap();
    assert!((a.lower - t.lower).abs() < 0.01 && (a.upper - t.upper).abs() < 0.01);
}

proptest! {
    #[test]
    fn interval_brackets_the_mean(xs in prop::collection::vec(-1.0f64..1.0, 2..60), level in 0.5f64..0.99) {
        let ci = confidence_interval(&xs, level).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert!(ci.lower <= mean + 1e-12 && mean <= ci.upper + 1e-12);
        prop_assert!(-1.0 <= ci.lower && ci.upper <= 1.0);
        let wider = confidence_interval(&xs, (level + 1.0) / 2.0).unwrap();
        prop_assert!(wider.lower <= ci.lower && ci.upper <= wider.upper);
    }

    #[test]
    fn macro_f1_matches_pairwise_count(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200),
    ) {
        let (pred, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let s = utility_scores(&pred, &labels, 4, Averaging::Macro).unwrap();
        let expect = (0..4).map(|c| naive_f1(&pred, &labels, c)).sum::<f64>() / 4.0;
        prop_assert!((s.f1 - expect).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&s.accuracy));
    }

    #[test]
    fn advantage_is_rate_difference(tpr in 0.0f64..=1.0, fpr in 0.0f64..=1.0) {
        let a = membership_advantage(tpr, fpr).unwrap();
        prop_assert_eq!(a, tpr - fpr);
    }
}
