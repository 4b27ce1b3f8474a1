mod common;

use common::gradcheck::{check_network, random_spec};
use dp_audit::data::ClassWeights;
use dp_audit::nn::{build_network, weighted_cross_entropy, Activation, LayerSpec, NetworkSpec};
use dp_audit::rng::{keyed, Stream};
use dp_audit::Tensor;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn per_sample_gradients_match_finite_differences() {
    for i in 0..20 {
        let (err, params) = check_network(i);
        assert!(params <= 5000, "network {i} has {params} parameters");
        assert!(err <= 1e-4, "network {i}: relative error {err:e}");
    }
}

#[test]
fn per_sample_rows_sum_to_batch_gradient() {
    for i in 0..10u64 {
        let spec = random_spec(&mut keyed(77 + i, Stream::Init, 3));
        let net = build_network(&spec, i).unwrap();
        let mut rng = keyed(i, Stream::Synthetic, 0);
        let dim: usize = spec.input_shape.iter().product();
        let mut shape = vec![5];
        shape.extend(&spec.input_shape);
        let x = Tensor::new(shape, (0..5 * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<usize> = (0..5).map(|_| rng.random_range(0..net.num_classes())).collect();
        let (logits, cache) = net.forward(&x).unwrap();
        let out = weighted_cross_entropy(&logits, &y, &ClassWeights::uniform(net.num_classes())).unwrap();
        let rows = net.backward_per_sample(&cache, &out.per_sample_dlogits).unwrap().sum();
        let total = net.backward_sum(&cache, &out.per_sample_dlogits).unwrap();
        for (a, b) in rows.iter().zip(&total) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn per_sample_row_ignores_other_samples() {
    let spec = random_spec(&mut keyed(5, Stream::Init, 3));
    let net = build_network(&spec, 5).unwrap();
    let dim: usize = spec.input_shape.iter().product();
    let mut rng = keyed(9, Stream::Synthetic, 0);
    let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grad_of_first = |second: &[f64]| {
        let mut shape = vec![2];
        shape.extend(&spec.input_shape);
        let x = Tensor::new(shape, [a.as_slice(), second].concat()).unwrap();
        let (logits, cache) = net.forward(&x).unwrap();
        let out = weighted_cross_entropy(&logits, &[0, 1], &ClassWeights::uniform(net.num_classes())).unwrap();
        net.backward_per_sample(&cache, &out.per_sample_dlogits).unwrap().row(0).to_vec()
    };
    assert_eq!(grad_of_first(&a), grad_of_first(&b));
}

fn cnn(act: Activation) -> NetworkSpec {
    NetworkSpec::new(
        vec![28, 28, 1],
        act,
        vec![
            LayerSpec::conv(1, 8, 3),
            LayerSpec::Activation,
            LayerSpec::max_pool(2),
            LayerSpec::conv(8, 16, 3),
            LayerSpec::Activation,
            LayerSpec::max_pool(2),
            LayerSpec::Flatten,
            LayerSpec::dense(400, 10),
        ],
    )
}

#[test]
fn activation_swap_keeps_parameters() {
    let relu = build_network(&cnn(Activation::Relu), 3).unwrap();
    let tanh = build_network(&cnn(Activation::Tanh), 3).unwrap();
    assert_eq!(relu.param_count(), tanh.param_count());
    assert_eq!(relu.param_count(), 8 * 9 + 8 + 16 * 72 + 16 + 4010);
    // Initialization follows the family (He vs. Glorot); an explicit swap
    // keeps every weight.
    let swapped = relu.with_activation(Activation::Tanh);
    assert_eq!(swapped.parameters(), relu.parameters());
    assert_eq!(swapped.spec(), tanh.spec());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tanh_hidden_activations_are_bounded(seed in 0u64..1000, scale in 0.1f64..50.0) {
        let net = build_network(&cnn(Activation::Tanh), seed).unwrap();
        let mut rng = keyed(seed, Stream::Synthetic, 1);
        let x = Tensor::new(vec![2, 28, 28, 1], (0..2 * 784).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        for i in 0..2 {
            for layer in cache.hidden_activations(i) {
                prop_assert!(layer.iter().all(|v| v.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn relu_hidden_activations_are_non_negative(seed in 0u64..1000) {
        let net = build_network(&cnn(Activation::Relu), seed).unwrap();
        let mut rng = keyed(seed, Stream::Synthetic, 2);
        let x = Tensor::new(vec![1, 28, 28, 1], (0..784).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        for layer in cache.hidden_activations(0) {
            prop_assert!(layer.iter().all(|&v| v >= 0.0));
        }
    }
}
