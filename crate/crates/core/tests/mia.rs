mod common;

use common::mia::{gaussian_pools, row_with_loss};
use dp_audit::data::LabeledDataset;
use dp_audit::metrics::confidence_interval;
use dp_audit::mia::{
    attack_split, build_attack_features, repeat_attacks, repeat_attacks_on, run_attack_suite, run_single_attack,
    AttackInput, AttackKind, AttackOptions,
};
use dp_audit::nn::{build_network, Activation, LayerSpec, Network, NetworkSpec};
use dp_audit::Tensor;
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::HashSet;

#[test]
fn threshold_recovers_the_gaussian_optimum() {
    let phi = Normal::new(0.0, 1.0).unwrap();
    // Equal-variance shift of 1: the best cutoff sits halfway.
    let optimum = phi.cdf(0.5) - phi.cdf(-0.5);
    assert!((optimum - 0.3829).abs() < 1e-4);
    let input = gaussian_pools(10_000, 5.0, 6.0, 1);
    let r = run_single_attack(AttackKind::Threshold, &input, 42).unwrap();
    assert!((r.advantage - optimum).abs() <= 0.05, "advantage {}", r.advantage);
}

#[test]
fn separable_losses_give_full_advantage() {
    let members = vec![row_with_loss(0.0); 50];
    let nonmembers = vec![row_with_loss(1.0); 70];
    let input = AttackInput::new(members, nonmembers).unwrap();
    for kind in AttackKind::ALL {
        assert_eq!(run_single_attack(kind, &input, 3).unwrap().advantage, 1.0, "{kind}");
    }
}

#[test]
fn single_attackers_are_unbiased_under_the_null() {
    for kind in AttackKind::ALL {
        let adv: Vec<f64> = (0..40)
            .map(|s| {
                let input = gaussian_pools(300, 5.0, 5.0, 1000 + s);
                run_single_attack(kind, &input, s).unwrap().advantage
            })
            .collect();
        let ci = confidence_interval(&adv, 0.95).unwrap();
        assert!(ci.lower <= 0.0 && 0.0 <= ci.upper, "{kind}: {ci:?}");
    }
}

#[test]
fn split_phases_never_overlap() {
    let input = gaussian_pools(301, 5.0, 6.0, 2);
    for seed in 0..20 {
        let s = attack_split(&input, seed);
        let tm: HashSet<_> = s.train_members.iter().collect();
        let tn: HashSet<_> = s.train_nonmembers.iter().collect();
        assert!(s.eval_members.iter().all(|i| !tm.contains(i)));
        assert!(s.eval_nonmembers.iter().all(|i| !tn.contains(i)));
        assert_eq!(s.eval_members.len(), s.eval_nonmembers.len());
    }
}

#[test]
fn wider_separation_never_hurts_the_threshold_attacker() {
    let mean_adv = |gap: f64| {
        (0..20)
            .map(|s| {
                run_single_attack(AttackKind::Threshold, &gaussian_pools(400, 5.0, 5.0 + gap, s), s).unwrap().advantage
            })
            .sum::<f64>()
            / 20.0
    };
    let advs: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 4.0].iter().map(|&g| mean_adv(g)).collect();
    assert!(advs.windows(2).all(|w| w[1] >= w[0] - 0.01), "{advs:?}");
}

#[test]
fn suite_returns_the_maximum_with_ordered_ties() {
    let input = gaussian_pools(500, 5.0, 5.8, 4);
    let suite = dp_audit::mia::run_attack_suite_with(&input, 11, &AttackOptions::default()).unwrap();
    let max = suite.all.iter().map(|r| r.advantage).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(suite.best.advantage, max);
    let first = suite.all.iter().find(|r| r.advantage == max).unwrap();
    assert_eq!(suite.best.kind, first.kind);
    assert_eq!(run_attack_suite(&input, 11).unwrap(), suite.best);
}

#[test]
fn repeated_attacks_are_bit_identical() {
    let input = gaussian_pools(200, 5.0, 5.5, 5);
    let opts = AttackOptions::default();
    let a = repeat_attacks_on(&input, 8, 42, &opts).unwrap();
    let b = repeat_attacks_on(&input, 8, 42, &opts).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0].best.seed, a[1].best.seed);
}

#[test]
fn per_class_slicing_runs() {
    let mut members: Vec<_> = (0..200).map(|i| row_with_loss(if i % 2 == 0 { 0.1 } else { 2.0 })).collect();
    for (i, r) in members.iter_mut().enumerate() {
        r.class = i % 2;
    }
    let mut nonmembers: Vec<_> = (0..200).map(|i| row_with_loss(if i % 2 == 0 { 0.3 } else { 2.2 })).collect();
    for (i, r) in nonmembers.iter_mut().enumerate() {
        r.class = i % 2;
    }
    let input = AttackInput::new(members, nonmembers).unwrap();
    let opts = AttackOptions { per_class: true, ..AttackOptions::default() };
    let sliced = dp_audit::mia::run_single_attack_with(AttackKind::Threshold, &input, 1, &opts).unwrap();
    // One cutoff per class separates both; a pooled cutoff cannot.
    assert_eq!(sliced.advantage, 1.0);
    assert!(run_single_attack(AttackKind::Threshold, &input, 1).unwrap().advantage < 1.0);
}

/// Sample `i` is the one-hot vector `e_i`; the target answers its stored
/// label with high confidence for members and uniformly for everyone else.
fn lookup_target(members: usize, nonmembers: usize, classes: usize) -> (Network, LabeledDataset, LabeledDataset) {
    let n = members + nonmembers;
    let spec =
        NetworkSpec::new(vec![1, n, 1], Activation::Relu, vec![LayerSpec::Flatten, LayerSpec::dense(n, classes)]);
    let mut net = build_network(&spec, 0).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % classes).collect();
    let mut params = vec![0.0; net.param_count()];
    for i in 0..members {
        params[labels[i] * n + i] = 30.0;
    }
    net.set_parameters(params).unwrap();
    let ds = |range: std::ops::Range<usize>| {
        let rows = range.len();
        let mut x = vec![0.0; rows * n];
        for (r, i) in range.clone().enumerate() {
            x[r * n + i] = 1.0;
        }
        LabeledDataset::new(
            Tensor::new(vec![rows, 1, n, 1], x).unwrap(),
            labels[range].to_vec(),
            LabeledDataset::numbered_classes(classes),
        )
        .unwrap()
    };
    (net, ds(0..members), ds(members..n))
}

#[test]
fn memorizing_target_is_fully_exposed() {
    let (net, train, test) = lookup_target(120, 80, 4);
    let input = build_attack_features(&net, &train, &test).unwrap();
    assert!(input.members().iter().all(|r| r.loss < 1e-10 && r.correct));
    assert!(input.nonmembers().iter().all(|r| (r.loss - 4f64.ln()).abs() < 1e-12));
    let adv = repeat_attacks(&net, &train, &test, 20, 42).unwrap();
    assert_eq!(adv.len(), 20);
    assert!(adv.iter().all(|&a| a >= 0.9), "{adv:?}");
}

#[test]
fn constant_output_target_leaks_nothing() {
    let (net, train, test) = lookup_target(60, 60, 3);
    let flat = net.with_activation(Activation::Relu);
    let mut blank = flat.clone();
    blank.set_parameters(vec![0.0; flat.param_count()]).unwrap();
    let input = build_attack_features(&blank, &train, &test).unwrap();
    assert!(input
        .members()
        .iter()
        .chain(input.nonmembers())
        .all(|r| r.confidences.iter().all(|&c| (c - 1.0 / 3.0).abs() < 1e-15)));
    let adv = repeat_attacks(&blank, &train, &test, 10, 42).unwrap();
    assert!(adv.iter().all(|&a| a == 0.0), "{adv:?}");
}

#[test]
fn feature_rows_ignore_class_order() {
    let a = dp_audit::mia::FeatureRow::new(vec![0.2, 0.5, 0.3], 0.7, false, 0).unwrap();
    let b = dp_audit::mia::FeatureRow::new(vec![0.3, 0.2, 0.5], 0.7, false, 0).unwrap();
    assert_eq!(a.vector(), b.vector());
}
