use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels;
use super::layer::{resolve, Activation, ConvGeom, Layout, NetworkSpec, Op};
use super::{NnError, PerSampleGrads};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// A sequential network: a resolved layout plus one flat parameter vector.
///
/// Parameters of all layers live in a single contiguous buffer so that a
/// per-sample gradient is one flat row of the same length.
#[derive(Debug, Clone)]
pub struct Network {
    layout: Arc<Layout>,
    params: Vec<f64>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layout.spec == other.layout.spec && self.params == other.params
    }
}

/// Build a network from `spec` with deterministic initialization.
///
/// Weights are drawn uniformly from `±sqrt(6 / fan_in)` for ReLU networks and
/// `±sqrt(6 / (fan_in + fan_out))` for tanh networks; biases start at zero.
/// Layer `i` draws from the keyed stream `(seed, init, i)`.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Network, NnError> {
    let layout = resolve(spec)?;
    let mut params = vec![0.0; layout.param_count];
    for (i, op) in layout.ops.iter().enumerate() {
        let mut rng = rng::keyed(seed, Stream::Init, i as u64);
        match op {
            Op::Dense { inputs, outputs, w_off, .. } => {
                let limit = init_limit(spec.activation, *inputs, *outputs);
                fill_uniform(&mut rng, &mut params[*w_off..*w_off + inputs * outputs], limit);
            }
            Op::Conv(g) => init_conv(&mut rng, spec.activation, g, &mut params),
            Op::Residual { first, second, projection } => {
                init_conv(&mut rng, spec.activation, first, &mut params);
                init_conv(&mut rng, spec.activation, second, &mut params);
                if let Some(p) = projection {
                    init_conv(&mut rng, spec.activation, p, &mut params);
                }
            }
            _ => {}
        }
    }
    Ok(Network { layout: Arc::new(layout), params })
}

fn init_limit(act: Activation, fan_in: usize, fan_out: usize) -> f64 {
    match act {
        Activation::Relu => (6.0 / fan_in as f64).sqrt(),
        Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
    }
}

fn init_conv(rng: &mut impl Rng, act: Activation, g: &ConvGeom, params: &mut [f64]) {
    let k2 = g.kernel * g.kernel;
    let limit = init_limit(act, k2 * g.in_c, k2 * g.out_c);
    fill_uniform(rng, &mut params[g.w_off..g.w_off + g.out_c * g.patch_len()], limit);
}

fn fill_uniform(rng: &mut impl Rng, out: &mut [f64], limit: f64) {
    for v in out {
        *v = rng.random_range(-limit..limit);
    }
}

/// Per-sample record of a forward pass.
#[derive(Debug, Clone)]
struct SampleTrace {
    /// `values[i]` is the input of op `i`; the last entry is the logit vector.
    values: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Argmax(Vec<usize>),
    /// Activated output of a residual block's first convolution.
    ResidualMid(Vec<f64>),
}

/// Opaque record produced by [`Network::forward`] and consumed by the
/// backward passes.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layout: Arc<Layout>,
    traces: Vec<SampleTrace>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.traces.len()
    }

    /// Outputs of every nonlinearity for sample `i`: activation layers and
    /// both activation sites inside residual blocks.
    pub fn hidden_activations(&self, i: usize) -> Vec<&[f64]> {
        let t = &self.traces[i];
        let mut out = Vec::new();
        for (k, op) in self.layout.ops.iter().enumerate() {
            match op {
                Op::Activation => out.push(t.values[k + 1].as_slice()),
                Op::Residual { .. } => {
                    if let Aux::ResidualMid(mid) = &t.aux[k] {
                        out.push(mid.as_slice());
                    }
                    out.push(t.values[k + 1].as_slice());
                }
                _ => {}
            }
        }
        out
    }
}

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.layout.spec
    }

    pub fn activation(&self) -> Activation {
        self.layout.spec.activation
    }

    pub fn param_count(&self) -> usize {
        self.layout.param_count
    }

    pub fn num_classes(&self) -> usize {
        self.layout.num_outputs()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.layout.shapes[0]
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access for optimizers.
    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_parameters(&mut self, params: Vec<f64>) -> Result<(), NnError> {
        if params.len() != self.params.len() {
            return Err(NnError::ParamLength { expected: self.params.len(), actual: params.len() });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("parameters"));
        }
        self.params = params;
        Ok(())
    }

    /// Parameters belonging to layer `i` (empty for parameter-free layers).
    pub fn layer_parameters(&self, i: usize) -> &[f64] {
        let (a, b) = self.layout.param_ranges[i];
        &self.params[a..b]
    }

    /// Same parameters, different activation family in every activation site.
    pub fn with_activation(&self, activation: Activation) -> Network {
        let mut spec = self.layout.spec.clone();
        spec.activation = activation;
        let layout = resolve(&spec).expect("activation swap keeps shapes");
        Network { layout: Arc::new(layout), params: self.params.clone() }
    }

    /// Replace the final dense layer with a freshly initialized one producing
    /// `num_classes` outputs. Used when fine-tuning a pre-trained body on a
    /// task with a different label set.
    pub fn replace_head(&self, num_classes: usize, seed: u64) -> Result<Network, NnError> {
        let spec = &self.layout.spec;
        let head = spec
            .layers
            .iter()
            .rposition(|l| matches!(l, super::LayerSpec::Dense { .. }))
            .ok_or_else(|| NnError::InvalidSpec("network has no dense head".into()))?;
        let mut new_spec = spec.clone();
        if let super::LayerSpec::Dense { outputs, .. } = &mut new_spec.layers[head] {
            *outputs = num_classes;
        }
        let fresh = build_network(&new_spec, seed)?;
        let (a, _) = self.layout.param_ranges[head];
        let mut params = fresh.params.clone();
        params[..a].copy_from_slice(&self.params[..a]);
        Ok(Network { layout: fresh.layout, params })
    }

    fn check_batch(&self, batch: &Tensor) -> Result<(), NnError> {
        if batch.shape().len() < 2 || batch.shape()[1..] != self.layout.shapes[0][..] {
            return Err(NnError::InputShape {
                expected: self.layout.shapes[0].clone(),
                actual: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn forward_sample(&self, x: &[f64]) -> SampleTrace {
        let act = self.activation();
        let p = &self.params;
        let mut values = Vec::with_capacity(self.layout.ops.len() + 1);
        let mut aux = Vec::with_capacity(self.layout.ops.len());
        values.push(x.to_vec());
        for op in &self.layout.ops {
            let input = values.last().expect("non-empty");
            let (out, a) = match op {
                Op::Dense { inputs, outputs, w_off, b_off } => {
                    (kernels::dense_forward(p, *inputs, *outputs, *w_off, *b_off, input), Aux::None)
                }
                Op::Conv(g) => (kernels::conv_forward(p, g, input), Aux::None),
                Op::Activation => (input.iter().map(|&v| act.apply(v)).collect(), Aux::None),
                Op::Flatten | Op::Softmax => (input.clone(), Aux::None),
                Op::Pool { mode, size, in_w, c, out_h, out_w, .. } => {
                    let (y, arg) = kernels::pool_forward(*mode, *size, *in_w, *c, *out_h, *out_w, input);
                    (y, Aux::Argmax(arg))
                }
                Op::Residual { first, second, projection } => {
                    let mut mid = kernels::conv_forward(p, first, input);
                    mid.iter_mut().for_each(|v| *v = act.apply(*v));
                    let mut y = kernels::conv_forward(p, second, &mid);
                    match projection {
                        Some(g) => {
                            let skip = kernels::conv_forward(p, g, input);
                            y.iter_mut().zip(&skip).for_each(|(v, s)| *v = act.apply(*v + s));
                        }
                        None => y.iter_mut().zip(input).for_each(|(v, s)| *v = act.apply(*v + s)),
                    }
                    (y, Aux::ResidualMid(mid))
                }
            };
            values.push(out);
            aux.push(a);
        }
        SampleTrace { values, aux }
    }

    /// Back-propagate `dout` (derivative w.r.t. the logits) through one
    /// sample's trace, accumulating into `grad` (length = parameter count).
    fn backward_sample(&self, trace: &SampleTrace, dout: &[f64], grad: &mut [f64]) {
        let act = self.activation();
        let p = &self.params;
        let mut d = dout.to_vec();
        for (k, op) in self.layout.ops.iter().enumerate().rev() {
            let x = &trace.values[k];
            let need_dx = k > 0;
            d = match op {
                Op::Dense { inputs, outputs, w_off, b_off } => {
                    kernels::dense_backward(p, *inputs, *outputs, *w_off, *b_off, x, &d, grad, need_dx)
                }
                Op::Conv(g) => kernels::conv_backward(p, g, x, &d, grad, need_dx),
                Op::Activation => {
                    let y = &trace.values[k + 1];
                    d.iter().zip(y).map(|(g, &yv)| g * act.derivative_from_output(yv)).collect()
                }
                Op::Flatten | Op::Softmax => d,
                Op::Pool { mode, size, in_h, in_w, c, out_h, out_w } => {
                    let arg = match &trace.aux[k] {
                        Aux::Argmax(a) => a.as_slice(),
                        _ => &[],
                    };
                    kernels::pool_backward(*mode, *size, *in_h, *in_w, *c, *out_h, *out_w, arg, &d)
                }
                Op::Residual { first, second, projection } => {
                    let Aux::ResidualMid(mid) = &trace.aux[k] else { unreachable!("residual trace") };
                    let y = &trace.values[k + 1];
                    let dz: Vec<f64> = d.iter().zip(y).map(|(g, &yv)| g * act.derivative_from_output(yv)).collect();
                    let dmid = kernels::conv_backward(p, second, mid, &dz, grad, true);
                    let dh: Vec<f64> = dmid.iter().zip(mid).map(|(g, &m)| g * act.derivative_from_output(m)).collect();
                    let mut dx = kernels::conv_backward(p, first, x, &dh, grad, need_dx);
                    match projection {
                        Some(g) => {
                            let ds = kernels::conv_backward(p, g, x, &dz, grad, need_dx);
                            dx.iter_mut().zip(&ds).for_each(|(a, b)| *a += b);
                        }
                        None if need_dx => dx.iter_mut().zip(&dz).for_each(|(a, b)| *a += b),
                        None => {}
                    }
                    dx
                }
            };
            if !need_dx {
                break;
            }
        }
    }

    /// Batched forward pass. `batch` is `(B, ..input_shape)`; returns logits
    /// `(B, num_classes)` and the cache needed by the backward passes.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache), NnError> {
        self.check_batch(batch)?;
        let traces: Vec<SampleTrace> = (0..batch.rows()).map(|i| self.forward_sample(batch.row(i))).collect();
        let k = self.num_classes();
        let mut logits = Vec::with_capacity(traces.len() * k);
        for t in &traces {
            logits.extend_from_slice(t.values.last().expect("output"));
        }
        let logits = Tensor::new(vec![traces.len(), k], logits).map_err(|_| NnError::NonFinite("logits"))?;
        Ok((logits, ForwardCache { layout: Arc::clone(&self.layout), traces }))
    }

    /// Logits without keeping a cache.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor, NnError> {
        self.check_batch(batch)?;
        let k = self.num_classes();
        let mut out = Vec::with_capacity(batch.rows() * k);
        for i in 0..batch.rows() {
            let mut t = self.forward_sample(batch.row(i));
            out.append(t.values.last_mut().expect("output"));
        }
        Tensor::new(vec![batch.rows(), k], out).map_err(|_| NnError::NonFinite("logits"))
    }

    /// Row-wise softmax of the logits.
    pub fn predict_proba(&self, inputs: &Tensor) -> Result<Tensor, NnError> {
        let logits = self.logits(inputs)?;
        Ok(super::loss::softmax(&logits))
    }

    fn check_cache(&self, cache: &ForwardCache, dlogits: &Tensor) -> Result<(), NnError> {
        if !Arc::ptr_eq(&cache.layout, &self.layout) && *cache.layout != *self.layout {
            return Err(NnError::CacheMismatch("cache was produced by a different network layout".into()));
        }
        if dlogits.shape() != [cache.traces.len(), self.num_classes()] {
            return Err(NnError::CacheMismatch(format!(
                "output gradient shape {:?} does not match batch of {} with {} classes",
                dlogits.shape(),
                cache.traces.len(),
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Per-sample gradients: row `i` is the gradient of the scalar whose
    /// derivative with respect to sample `i`'s logits is row `i` of
    /// `dlogits`. Feed it the per-sample rows from
    /// [`weighted_cross_entropy`](super::weighted_cross_entropy) to get each
    /// sample's own weighted-loss gradient.
    pub fn backward_per_sample(&self, cache: &ForwardCache, dlogits: &Tensor) -> Result<PerSampleGrads, NnError> {
        self.check_cache(cache, dlogits)?;
        let dim = self.param_count();
        let mut grads = PerSampleGrads::zeros(cache.traces.len(), dim);
        for (i, trace) in cache.traces.iter().enumerate() {
            self.backward_sample(trace, dlogits.row(i), grads.row_mut(i));
        }
        Ok(grads)
    }

    /// Sum over the batch of the per-sample gradients, without materializing
    /// the rows.
    pub fn backward_sum(&self, cache: &ForwardCache, dlogits: &Tensor) -> Result<Vec<f64>, NnError> {
        self.check_cache(cache, dlogits)?;
        let mut grad = vec![0.0; self.param_count()];
        for (i, trace) in cache.traces.iter().enumerate() {
            self.backward_sample(trace, dlogits.row(i), &mut grad);
        }
        Ok(grad)
    }
}

/// Serializable form of a network (spec + parameters).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub spec: NetworkSpec,
    pub parameters: Vec<f64>,
}

impl From<&Network> for NetworkSnapshot {
    fn from(net: &Network) -> Self {
        NetworkSnapshot { spec: net.spec().clone(), parameters: net.parameters().to_vec() }
    }
}

impl TryFrom<NetworkSnapshot> for Network {
    type Error = NnError;

    fn try_from(s: NetworkSnapshot) -> Result<Self, NnError> {
        let mut net = build_network(&s.spec, 0)?;
        net.set_parameters(s.parameters)?;
        Ok(net)
    }
}
