//! Per-sample gradients against central finite differences.

use dp_audit::data::ClassWeights;
use dp_audit::nn::{
    build_network, output_len, weighted_cross_entropy, Activation, LayerSpec, Network, NetworkSpec, PoolMode,
};
use dp_audit::rng::{keyed, Stream};
use dp_audit::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn with_head(input: Vec<usize>, act: Activation, mut layers: Vec<LayerSpec>, classes: usize) -> NetworkSpec {
    let body = NetworkSpec::new(input.clone(), act, layers.clone());
    let n = output_len(&body).expect("body resolves");
    layers.push(LayerSpec::dense(n, classes));
    NetworkSpec::new(input, act, layers)
}

/// A random small network mixing every layer kind.
pub fn random_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let act = if rng.random_bool(0.5) { Activation::Relu } else { Activation::Tanh };
    let classes = rng.random_range(2..=5);
    match rng.random_range(0..4) {
        0 => {
            let d = rng.random_range(3..=10);
            let h = rng.random_range(2..=16);
            let mut layers = vec![LayerSpec::dense(d, h), LayerSpec::Activation];
            if rng.random_bool(0.5) {
                layers.extend([LayerSpec::dense(h, h), LayerSpec::Activation]);
            }
            with_head(vec![d], act, layers, classes)
        }
        1 => {
            let (h, w, c) = (rng.random_range(5..=8), rng.random_range(5..=8), rng.random_range(1..=2));
            let f = rng.random_range(2..=4);
            let mode = if rng.random_bool(0.5) { PoolMode::Max } else { PoolMode::Avg };
            let layers = vec![
                LayerSpec::conv(c, f, rng.random_range(2..=3)),
                LayerSpec::Activation,
                LayerSpec::Pool { mode, size: 2 },
                LayerSpec::Flatten,
            ];
            with_head(vec![h, w, c], act, layers, classes)
        }
        2 => {
            let (h, c) = (rng.random_range(6..=9), rng.random_range(1..=3));
            let layers = vec![
                LayerSpec::Conv2d { in_channels: c, out_channels: 3, kernel: 3, stride: 2, padding: 1 },
                LayerSpec::Activation,
                LayerSpec::Flatten,
            ];
            with_head(vec![h, h, c], act, layers, classes)
        }
        _ => {
            let (h, c) = (rng.random_range(4..=6), rng.random_range(1..=2));
            let out = c + rng.random_range(0..=1);
            let layers = vec![LayerSpec::residual(c, out, 3), LayerSpec::Flatten];
            with_head(vec![h, h, c], act, layers, classes)
        }
    }
}

fn per_sample_losses(net: &Network, x: &Tensor, y: &[usize]) -> Vec<f64> {
    let logits = net.logits(x).expect("forward");
    weighted_cross_entropy(&logits, y, &ClassWeights::uniform(net.num_classes())).expect("loss").per_sample
}

/// Largest per-sample relative error `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)` for
/// network `index`, together with its parameter count.
pub fn check_network(index: u64) -> (f64, usize) {
    let mut rng = keyed(1000 + index, Stream::Init, 7);
    let spec = random_spec(&mut rng);
    let mut net = build_network(&spec, index).expect("spec builds");
    let batch = 3;
    let dim: usize = spec.input_shape.iter().product();
    let mut shape = vec![batch];
    shape.extend(&spec.input_shape);
    let x = Tensor::new(shape, (0..batch * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..net.num_classes())).collect();

    let (logits, cache) = net.forward(&x).unwrap();
    let out = weighted_cross_entropy(&logits, &y, &ClassWeights::uniform(net.num_classes())).unwrap();
    let grads = net.backward_per_sample(&cache, &out.per_sample_dlogits).unwrap();

    let h = 1e-5;
    let p = net.param_count();
    let mut fd = vec![vec![0.0; p]; batch];
    for j in 0..p {
        let orig = net.parameters()[j];
        net.parameters_mut()[j] = orig + h;
        let up = per_sample_losses(&net, &x, &y);
        net.parameters_mut()[j] = orig - h;
        let down = per_sample_losses(&net, &x, &y);
        net.parameters_mut()[j] = orig;
        for (i, row) in fd.iter_mut().enumerate() {
            row[j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    let mut worst: f64 = 0.0;
    for (i, fdi) in fd.iter().enumerate() {
        let a = grads.row(i);
        let diff = a.iter().zip(fdi).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|u| u * u).sum::<f64>().sqrt().max(fdi.iter().map(|v| v * v).sum::<f64>().sqrt());
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    (worst, p)
}
