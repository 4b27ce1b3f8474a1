use std::fmt;

use serde::{Deserialize, Serialize};

use super::NnError;

/// Nonlinearity used by every activation site of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

/// One layer of a sequential network. Activation layers carry no family tag;
/// the family is set once for the whole network in [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Activation,
    Flatten,
    Pool {
        mode: PoolMode,
        size: usize,
    },
    /// Two same-padded convolutions with an activation between them, an
    /// identity skip (1×1 projection when channel counts differ) and an
    /// activation after the sum.
    Residual {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    /// Marks that the network's outputs are read as class probabilities.
    /// Only allowed last; `forward` still returns the pre-softmax logits.
    Softmax,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs }
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d { in_channels, out_channels, kernel, stride: 1, padding: 0 }
    }

    pub fn max_pool(size: usize) -> Self {
        LayerSpec::Pool { mode: PoolMode::Max, size }
    }

    pub fn avg_pool(size: usize) -> Self {
        LayerSpec::Pool { mode: PoolMode::Avg, size }
    }

    pub fn residual(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Residual { in_channels, out_channels, kernel }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { inputs, outputs } => write!(f, "dense {inputs}->{outputs}"),
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                write!(f, "conv2d {in_channels}->{out_channels} k{kernel} s{stride} p{padding}")
            }
            LayerSpec::Activation => f.write_str("activation"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Pool { mode, size } => {
                let mode = match mode {
                    PoolMode::Max => "max",
                    PoolMode::Avg => "avg",
                };
                write!(f, "{mode} pool {size}")
            }
            LayerSpec::Residual { in_channels, out_channels, kernel } => {
                write!(f, "residual {in_channels}->{out_channels} k{kernel}")
            }
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

/// A full network description: per-sample input shape, activation family and
/// layer list. Inputs are either flat vectors `[n]` or images `[h, w, c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, activation: Activation, layers: Vec<LayerSpec>) -> Self {
        Self { input_shape, activation, layers }
    }
}

/// Geometry of one convolution, resolved at build time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn param_count(&self) -> usize {
        self.out_c * self.patch_len() + self.out_c
    }
}

/// Resolved layer with shapes and parameter offsets.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Op {
    Dense { inputs: usize, outputs: usize, w_off: usize, b_off: usize },
    Conv(ConvGeom),
    Activation,
    Flatten,
    Pool { mode: PoolMode, size: usize, in_h: usize, in_w: usize, c: usize, out_h: usize, out_w: usize },
    Residual { first: ConvGeom, second: ConvGeom, projection: Option<ConvGeom> },
    Softmax,
}

impl Op {
    pub fn param_count(&self) -> usize {
        match self {
            Op::Dense { inputs, outputs, .. } => inputs * outputs + outputs,
            Op::Conv(g) => g.param_count(),
            Op::Residual { first, second, projection } => {
                first.param_count() + second.param_count() + projection.map_or(0, |p| p.param_count())
            }
            _ => 0,
        }
    }
}

/// Everything about a network except its parameter values.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub spec: NetworkSpec,
    pub ops: Vec<Op>,
    /// Shape entering each op, plus the final output shape.
    pub shapes: Vec<Vec<usize>>,
    pub param_count: usize,
    /// Parameter range `[start, end)` of each op.
    pub param_ranges: Vec<(usize, usize)>,
}

impl Layout {
    pub fn num_outputs(&self) -> usize {
        self.shapes.last().map_or(0, |s| s.iter().product())
    }
}

fn describe_input(index: usize, layers: &[LayerSpec], shape: &[usize]) -> String {
    if index == 0 {
        format!("input {shape:?}")
    } else {
        format!("layer {} ({}) output {shape:?}", index - 1, layers[index - 1])
    }
}

fn conv_geom(
    shape: &[usize],
    in_c: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    offset: usize,
) -> Option<ConvGeom> {
    let &[in_h, in_w, c] = shape else { return None };
    if c != in_c || kernel == 0 || stride == 0 || in_h + 2 * padding < kernel || in_w + 2 * padding < kernel {
        return None;
    }
    let out_h = (in_h + 2 * padding - kernel) / stride + 1;
    let out_w = (in_w + 2 * padding - kernel) / stride + 1;
    let w_off = offset;
    let b_off = w_off + out_c * kernel * kernel * in_c;
    Some(ConvGeom { in_h, in_w, in_c, out_h, out_w, out_c, kernel, stride, padding, w_off, b_off })
}

/// Resolve shapes and parameter offsets, rejecting incompatible neighbours.
pub(crate) fn resolve(spec: &NetworkSpec) -> Result<Layout, NnError> {
    if spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
        return Err(NnError::InvalidSpec(format!("input shape {:?} must be non-empty and positive", spec.input_shape)));
    }
    if !(spec.input_shape.len() == 1 || spec.input_shape.len() == 3) {
        return Err(NnError::InvalidSpec(format!(
            "input shape {:?} must be [features] or [height, width, channels]",
            spec.input_shape
        )));
    }
    if spec.layers.is_empty() {
        return Err(NnError::InvalidSpec("network has no layers".into()));
    }
    let mut shape = spec.input_shape.clone();
    let mut shapes = vec![shape.clone()];
    let mut ops = Vec::with_capacity(spec.layers.len());
    let mut ranges = Vec::with_capacity(spec.layers.len());
    let mut offset = 0usize;
    for (i, layer) in spec.layers.iter().enumerate() {
        let mismatch = |shape: &[usize]| NnError::ShapeMismatch {
            layer: i,
            upstream: describe_input(i, &spec.layers, shape),
            downstream: format!("layer {i} ({layer})"),
        };
        let op = match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                if shape != [inputs] || outputs == 0 {
                    return Err(mismatch(&shape));
                }
                Op::Dense { inputs, outputs, w_off: offset, b_off: offset + inputs * outputs }
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                if out_channels == 0 {
                    return Err(mismatch(&shape));
                }
                Op::Conv(
                    conv_geom(&shape, in_channels, out_channels, kernel, stride, padding, offset)
                        .ok_or_else(|| mismatch(&shape))?,
                )
            }
            LayerSpec::Activation => Op::Activation,
            LayerSpec::Flatten => Op::Flatten,
            LayerSpec::Pool { mode, size } => {
                let &[in_h, in_w, c] = shape.as_slice() else { return Err(mismatch(&shape)) };
                if size == 0 || in_h < size || in_w < size {
                    return Err(mismatch(&shape));
                }
                Op::Pool { mode, size, in_h, in_w, c, out_h: in_h / size, out_w: in_w / size }
            }
            LayerSpec::Residual { in_channels, out_channels, kernel } => {
                if kernel % 2 == 0 || out_channels == 0 {
                    return Err(NnError::InvalidSpec(format!(
                        "layer {i} ({layer}): residual blocks need an odd kernel and positive channels"
                    )));
                }
                let pad = kernel / 2;
                let first = conv_geom(&shape, in_channels, out_channels, kernel, 1, pad, offset)
                    .ok_or_else(|| mismatch(&shape))?;
                let mid = [first.out_h, first.out_w, out_channels];
                let second = conv_geom(&mid, out_channels, out_channels, kernel, 1, pad, offset + first.param_count())
                    .expect("same-padded conv keeps its shape");
                let projection = (in_channels != out_channels).then(|| {
                    conv_geom(
                        &shape,
                        in_channels,
                        out_channels,
                        1,
                        1,
                        0,
                        offset + first.param_count() + second.param_count(),
                    )
                    .expect("1x1 conv fits any input")
                });
                Op::Residual { first, second, projection }
            }
            LayerSpec::Softmax => {
                if i + 1 != spec.layers.len() || shape.len() != 1 {
                    return Err(NnError::InvalidSpec(format!(
                        "layer {i}: softmax must be the last layer on a flat output"
                    )));
                }
                Op::Softmax
            }
        };
        let n = op.param_count();
        ranges.push((offset, offset + n));
        offset += n;
        shape = match &op {
            Op::Dense { outputs, .. } => vec![*outputs],
            Op::Conv(g) => vec![g.out_h, g.out_w, g.out_c],
            Op::Activation | Op::Softmax => shape,
            Op::Flatten => vec![shape.iter().product()],
            Op::Pool { out_h, out_w, c, .. } => vec![*out_h, *out_w, *c],
            Op::Residual { second, .. } => vec![second.out_h, second.out_w, second.out_c],
        };
        shapes.push(shape.clone());
        ops.push(op);
    }
    if shape.len() != 1 {
        return Err(NnError::InvalidSpec(format!(
            "network output {shape:?} must be flat (add a flatten + dense head)"
        )));
    }
    Ok(Layout { spec: spec.clone(), ops, shapes, param_count: offset, param_ranges: ranges })
}
