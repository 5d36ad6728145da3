//! A small feed-forward classifier engine.
//!
//! Networks are ordered lists of five layer kinds (dense, conv2d, relu,
//! 2x2 max-pool, flatten) ending in raw logits. The engine provides
//! forward scores, exact input gradients of any logit or of the
//! cross-entropy loss, seeded SGD training and the `SFW1` weight format.

mod dataset;
mod engine;
mod gemm;
mod train;
mod weights;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use dataset::LabeledDataset;
pub use engine::Trace;
pub use train::{accuracy, train_sgd, TrainConfig, TrainReport};
pub use weights::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input shape {actual:?} does not match network input {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("layer {index} ({layer}) cannot accept input of shape {shape:?}: {reason}")]
    LayerShape {
        index: usize,
        layer: String,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("network must end in a logit vector, got shape {0:?}")]
    NotLogits(Vec<usize>),
    #[error("class index {index} out of range for {classes} classes")]
    ClassIndex { index: usize, classes: usize },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("invalid training configuration: {0}")]
    TrainConfig(String),
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("corrupt weight file: {0}")]
    CorruptWeights(String),
    #[error("unsupported weight file version {found} (expected {expected})")]
    WeightsVersion { found: u32, expected: u32 },
    #[error("weights do not match declared architecture: {0}")]
    ArchitectureMismatch(String),
    #[error("cannot parse architecture descriptor: {0}")]
    Descriptor(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub weight: Tensor,
    /// `out`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `out_channels x in_channels x kh x kw`
    pub weight: Tensor,
    /// `out_channels`
    pub bias: Tensor,
    pub stride: usize,
    /// Zero padding on every side.
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
    MaxPool2x2,
    Flatten,
}

/// Architecture-only description of a layer; what the weight-file
/// descriptor records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2x2,
    Flatten,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Dense { inputs, outputs } => write!(f, "dense:{inputs}:{outputs}"),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel: (kh, kw),
                stride,
                padding,
            } => write!(f, "conv2d:{in_channels}:{out_channels}:{kh}x{kw}:s{stride}:p{padding}"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool2x2 => f.write_str("maxpool2x2"),
            LayerSpec::Flatten => f.write_str("flatten"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || NetError::Descriptor(format!("bad layer {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let prefixed = |v: &str, p: char| v.strip_prefix(p).ok_or_else(bad).and_then(int);
        match parts.as_slice() {
            ["relu"] => Ok(LayerSpec::Relu),
            ["maxpool2x2"] => Ok(LayerSpec::MaxPool2x2),
            ["flatten"] => Ok(LayerSpec::Flatten),
            ["dense", i, o] => Ok(LayerSpec::Dense {
                inputs: int(i)?,
                outputs: int(o)?,
            }),
            ["conv2d", ic, oc, k, st, pad] => {
                let (kh, kw) = k.split_once('x').ok_or_else(bad)?;
                Ok(LayerSpec::Conv2d {
                    in_channels: int(ic)?,
                    out_channels: int(oc)?,
                    kernel: (int(kh)?, int(kw)?),
                    stride: prefixed(st, 's')?,
                    padding: prefixed(pad, 'p')?,
                })
            }
            _ => Err(bad()),
        }
    }
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.weight.shape()[1],
                outputs: d.weight.shape()[0],
            },
            Layer::Conv2d(c) => {
                let s = c.weight.shape();
                LayerSpec::Conv2d {
                    in_channels: s[1],
                    out_channels: s[0],
                    kernel: (s[2], s[3]),
                    stride: c.stride,
                    padding: c.padding,
                }
            }
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool2x2 => LayerSpec::MaxPool2x2,
            Layer::Flatten => LayerSpec::Flatten,
        }
    }

    /// Trainable tensors in serialization order (weight, then bias).
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            _ => Vec::new(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            _ => Vec::new(),
        }
    }
}

impl LayerSpec {
    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => match input {
                [n] if *n == inputs => Ok(vec![outputs]),
                _ => Err(format!("dense expects a flat vector of {inputs}")),
            },
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel: (kh, kw),
                stride,
                padding,
            } => match *input {
                [c, h, w] if c == in_channels => {
                    if stride == 0 {
                        return Err("stride must be positive".into());
                    }
                    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
                    if kh == 0 || kw == 0 || kh > ph || kw > pw {
                        return Err(format!("kernel {kh}x{kw} does not fit {ph}x{pw}"));
                    }
                    Ok(vec![out_channels, (ph - kh) / stride + 1, (pw - kw) / stride + 1])
                }
                _ => Err(format!("conv2d expects {in_channels} x H x W")),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool2x2 => match *input {
                [c, h, w] if h % 2 == 0 && w % 2 == 0 && h > 0 && w > 0 => Ok(vec![c, h / 2, w / 2]),
                _ => Err("maxpool2x2 needs C x H x W with even H and W".into()),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    /// Parameter tensor shapes (weight, bias).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel: (kh, kw),
                ..
            } => vec![vec![out_channels, in_channels, kh, kw], vec![out_channels]],
            _ => Vec::new(),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d {
                in_channels,
                kernel: (kh, kw),
                ..
            } => in_channels * kh * kw,
            _ => 0,
        }
    }

    /// Layer with all-zero parameters.
    pub fn zeroed(&self) -> Layer {
        self.build(|_| 0.0)
    }

    fn build(&self, mut weight: impl FnMut(usize) -> f64) -> Layer {
        let shapes = self.param_shapes();
        match *self {
            LayerSpec::Dense { .. } => Layer::Dense(Dense {
                weight: Tensor::from_fn(&shapes[0], &mut weight),
                bias: Tensor::zeros(&shapes[1]),
            }),
            LayerSpec::Conv2d { stride, padding, .. } => Layer::Conv2d(Conv2d {
                weight: Tensor::from_fn(&shapes[0], &mut weight),
                bias: Tensor::zeros(&shapes[1]),
                stride,
                padding,
            }),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool2x2 => Layer::MaxPool2x2,
            LayerSpec::Flatten => Layer::Flatten,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the
    /// logit shape.
    shapes: Vec<Vec<usize>>,
}

impl Network {
    /// Validates that the layers chain from `input_shape` to a logit vector.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(Layer::spec).collect();
        let shapes = chain_shapes(&input_shape, &specs)?;
        for (layer, spec) in layers.iter().zip(&specs) {
            for (t, shape) in layer.params().into_iter().zip(spec.param_shapes()) {
                if t.shape() != shape.as_slice() {
                    return Err(NetError::ArchitectureMismatch(format!(
                        "{spec}: parameter shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
            }
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    /// Builds a network with uniform fan-in scaled weights
    /// (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`) and zero biases.
    pub fn initialize(input_shape: Vec<usize>, specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self> {
        chain_shapes(&input_shape, specs)?;
        let layers = specs
            .iter()
            .map(|spec| {
                let bound = if spec.is_parametric() {
                    (6.0 / spec.fan_in() as f64).sqrt()
                } else {
                    0.0
                };
                spec.build(|_| rng.gen_range(-bound..=bound))
            })
            .collect();
        Network::new(input_shape, layers)
    }

    pub fn zeroed(input_shape: Vec<usize>, specs: &[LayerSpec]) -> Result<Self> {
        Network::new(input_shape, specs.iter().map(LayerSpec::zeroed).collect())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().expect("at least the input shape")[0]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Self-describing architecture string, e.g.
    /// `input:1x28x28;flatten;dense:784:256;relu;dense:256:10`.
    pub fn descriptor(&self) -> String {
        let dims: Vec<String> = self.input_shape.iter().map(usize::to_string).collect();
        let mut parts = vec![format!("input:{}", dims.join("x"))];
        parts.extend(self.layers.iter().map(|l| l.spec().to_string()));
        parts.join(";")
    }

    pub fn parse_descriptor(descriptor: &str) -> Result<(Vec<usize>, Vec<LayerSpec>)> {
        let mut parts = descriptor.split(';');
        let head = parts
            .next()
            .and_then(|h| h.strip_prefix("input:"))
            .ok_or_else(|| NetError::Descriptor("missing input shape".into()))?;
        let input = head
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| NetError::Descriptor(format!("bad input shape {head:?}")))?;
        let specs = parts.map(str::parse).collect::<Result<Vec<LayerSpec>>>()?;
        Ok((input, specs))
    }

    pub(crate) fn layer_input_shape(&self, index: usize) -> &[usize] {
        &self.shapes[index]
    }

    pub(crate) fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(NetError::InputShape {
                expected: self.input_shape.clone(),
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_class(&self, index: usize) -> Result<()> {
        let classes = self.num_classes();
        if index >= classes {
            return Err(NetError::ClassIndex { index, classes });
        }
        Ok(())
    }

    /// Raw logits `f_j(x)`.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.logits().to_vec())
    }

    /// `argmax_j f_j(x)`, ties resolved to the lowest index.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Gradient of logit `class_index` with respect to the input.
    pub fn input_gradient(&self, x: &Tensor, class_index: usize) -> Result<Tensor> {
        self.check_class(class_index)?;
        let trace = self.trace(x)?;
        Ok(trace.logit_gradients(&[class_index]).remove(0))
    }

    /// Gradient of softmax cross-entropy at `label` with respect to the input.
    pub fn loss_gradient(&self, x: &Tensor, label: usize) -> Result<Tensor> {
        Ok(self.loss_and_gradient(x, label)?.1)
    }

    pub fn loss_and_gradient(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor)> {
        self.check_class(label)?;
        let trace = self.trace(x)?;
        let (loss, dlogits) = cross_entropy(trace.logits(), label);
        let grad = trace.seed_gradient(&dlogits);
        Ok((loss, grad))
    }

    /// Single-sample forward pass that keeps what the backward pass needs.
    pub fn trace(&self, x: &Tensor) -> Result<Trace<'_>> {
        self.check_input(x)?;
        Ok(engine::forward(self, x.data(), 1, false))
    }
}

fn chain_shapes(input: &[usize], specs: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    if input.is_empty() || input.contains(&0) {
        return Err(NetError::Descriptor(format!("invalid input shape {input:?}")));
    }
    let mut shapes = vec![input.to_vec()];
    for (index, spec) in specs.iter().enumerate() {
        let cur = shapes.last().expect("non-empty");
        let next = spec.output_shape(cur).map_err(|reason| NetError::LayerShape {
            index,
            layer: spec.to_string(),
            shape: cur.clone(),
            reason,
        })?;
        shapes.push(next);
    }
    let last = shapes.last().expect("non-empty");
    if last.len() != 1 || last[0] < 1 {
        return Err(NetError::NotLogits(last.clone()));
    }
    Ok(shapes)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax cross-entropy loss and its gradient with respect to the logits.
///
/// The label entry of the gradient is `−Σ_{j≠label} p_j` rather than
/// `p_label − 1`, which rounds to zero once the softmax saturates.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let rest: f64 = exps.iter().enumerate().filter(|&(j, _)| j != label).map(|(_, e)| e).sum();
    let loss = if logits[label] == max {
        rest.ln_1p()
    } else {
        total.ln() - (logits[label] - max)
    };
    let mut grad: Vec<f64> = exps.into_iter().map(|e| e / total).collect();
    grad[label] = -rest / total;
    (loss, grad)
}

/// The two fixture architectures used throughout the experiments.
pub mod fixtures {
    use super::LayerSpec;

    pub const MNIST_SHAPE: [usize; 3] = [1, 28, 28];

    /// flatten -> dense(784->256) -> relu -> dense(256->10)
    pub fn fc2() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: 784,
                outputs: 256,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 256,
                outputs: 10,
            },
        ]
    }

    /// conv(1->6, 5x5) -> relu -> pool -> conv(6->16, 5x5) -> relu -> pool
    /// -> flatten -> dense(256->120) -> relu -> dense(120->10)
    pub fn lenet() -> Vec<LayerSpec> {
        let conv = |in_channels, out_channels| LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: (5, 5),
            stride: 1,
            padding: 0,
        };
        vec![
            conv(1, 6),
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            conv(6, 16),
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: 256,
                outputs: 120,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 120,
                outputs: 10,
            },
        ]
    }
}
