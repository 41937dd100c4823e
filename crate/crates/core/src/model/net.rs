use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{Architecture, LayerSpec};
use crate::error::{Error, Result};
use crate::nn::{relu, relu_backward, softmax, Conv2d, Dense, Dropout, Init, MaxPool2d, Mode, Param};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
enum Layer<T: Real> {
    Conv(Conv2d<T>),
    Relu,
    MaxPool(MaxPool2d),
    Dropout(Dropout<T>),
    Flatten,
    Dense(Dense<T>),
    Softmax,
}

#[derive(Debug, Clone)]
struct Slot<T: Real> {
    spec: LayerSpec,
    layer: Layer<T>,
    /// Input seen by the last caching forward pass.
    input: Option<Tensor<T>>,
}

/// Class decision for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

/// A sequential network over `[N, C, H, W]` batches ending in softmax.
#[derive(Debug, Clone)]
pub struct WbcNet<T: Real> {
    input: [usize; 3],
    slots: Vec<Slot<T>>,
    dropout_rng: ChaCha8Rng,
}

impl<T: Real> WbcNet<T> {
    /// The four-block white blood cell classifier with seeded initialization (see
    /// [`WbcNet::initialize`]).
    pub fn build(n_classes: usize, seed: u64) -> Result<Self> {
        Self::from_architecture(&Architecture::wbc(n_classes), seed)
    }

    pub fn from_architecture(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut net = Self::from_specs(arch.input, &arch.layers()?)?;
        net.initialize(seed);
        Ok(net)
    }

    /// Zero-initialized network from explicit layer specs.
    pub fn from_specs(input: [usize; 3], specs: &[LayerSpec]) -> Result<Self> {
        if specs.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::InvalidParameter("layer stack must end in softmax".into()));
        }
        let mut slots = Vec::with_capacity(specs.len());
        let mut shape = input.to_vec();
        for spec in specs {
            let layer = match *spec {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let conv = Conv2d::new(in_channels, out_channels, kernel, stride, padding)?;
                    let [c, h, w] = shape[..] else {
                        return Err(stack_err(spec, &shape));
                    };
                    if c != in_channels {
                        return Err(stack_err(spec, &shape));
                    }
                    let (oh, ow) = conv.output_hw(h, w)?;
                    shape = vec![out_channels, oh, ow];
                    Layer::Conv(conv)
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool { pool, stride } => {
                    let p = MaxPool2d::new(pool.0, pool.1, stride)?;
                    let [c, h, w] = shape[..] else {
                        return Err(stack_err(spec, &shape));
                    };
                    let (oh, ow) = p.output_hw(h, w)?;
                    shape = vec![c, oh, ow];
                    Layer::MaxPool(p)
                }
                LayerSpec::Dropout { rate } => Layer::Dropout(Dropout::new(rate)?),
                LayerSpec::Flatten { features } => {
                    if shape.iter().product::<usize>() != features {
                        return Err(stack_err(spec, &shape));
                    }
                    shape = vec![features];
                    Layer::Flatten
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    if shape != [in_features] {
                        return Err(stack_err(spec, &shape));
                    }
                    shape = vec![out_features];
                    Layer::Dense(Dense::new(in_features, out_features)?)
                }
                LayerSpec::Softmax => {
                    if shape.len() != 1 {
                        return Err(stack_err(spec, &shape));
                    }
                    Layer::Softmax
                }
            };
            slots.push(Slot {
                spec: spec.clone(),
                layer,
                input: None,
            });
        }
        Ok(WbcNet {
            input,
            slots,
            dropout_rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    /// Half-gain Glorot-uniform kernels for convolutions, He-uniform for
    /// hidden dense layers, Glorot-uniform for the output layer, zero
    /// biases. Also reseeds the dropout stream.
    ///
    /// The small convolution gain keeps the wide flatten-to-dense product
    /// near zero at start, so the first sign-like Adam steps stay small.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last_dense = self.slots.iter().rposition(|s| matches!(s.layer, Layer::Dense(_)));
        for (i, slot) in self.slots.iter_mut().enumerate() {
            match &mut slot.layer {
                Layer::Conv(c) => c.init(Init::GlorotUniformHalf, &mut rng),
                Layer::Dense(d) if Some(i) == last_dense => d.init(Init::GlorotUniform, &mut rng),
                Layer::Dense(d) => d.init(Init::HeUniform, &mut rng),
                _ => {}
            }
        }
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
        self.dropout_rng.set_stream(1);
    }

    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
        self.dropout_rng.set_stream(1);
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn n_classes(&self) -> usize {
        self.slots
            .iter()
            .rev()
            .find_map(|s| match &s.layer {
                Layer::Dense(d) => Some(d.out_features()),
                _ => None,
            })
            .unwrap_or_default()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.slots.iter().map(|s| s.spec.clone()).collect()
    }

    /// Architecture text stored in checkpoints: an `input CxHxW` line
    /// followed by one line per layer.
    pub fn descriptor(&self) -> String {
        let [c, h, w] = self.input;
        let mut text = format!("input {c}x{h}x{w}\n");
        for s in &self.slots {
            text.push_str(&s.spec.to_string());
            text.push('\n');
        }
        text
    }

    pub fn from_descriptor(descriptor: &str) -> Result<Self> {
        let mut lines = descriptor.lines().filter(|l| !l.trim().is_empty());
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("empty architecture descriptor".into()))?;
        let dims = first
            .strip_prefix("input ")
            .ok_or_else(|| Error::Format(format!("expected input line, got {first:?}")))?;
        let parsed: Vec<usize> = dims
            .split('x')
            .map(|d| {
                d.trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("bad input line {first:?}")))
            })
            .collect::<Result<_>>()?;
        let [c, h, w] = parsed[..] else {
            return Err(Error::Format(format!("bad input line {first:?}")));
        };
        let specs = lines.map(str::parse).collect::<Result<Vec<LayerSpec>>>()?;
        Self::from_specs([c, h, w], &specs)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for s in &self.slots {
            match &s.layer {
                Layer::Conv(c) => out.extend([&c.kernels, &c.bias]),
                Layer::Dense(d) => out.extend([&d.weights, &d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for s in &mut self.slots {
            match &mut s.layer {
                Layer::Conv(c) => out.extend([&mut c.kernels, &mut c.bias]),
                Layer::Dense(d) => out.extend([&mut d.weights, &mut d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Drops every cached activation.
    pub fn clear_caches(&mut self) {
        for s in &mut self.slots {
            s.input = None;
            match &mut s.layer {
                Layer::MaxPool(p) => p.clear_cache(),
                Layer::Dropout(d) => d.clear_cache(),
                _ => {}
            }
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<bool> {
        let s = x.shape();
        match s.len() {
            3 if s == self.input => Ok(false),
            4 if s[1..] == self.input => Ok(true),
            _ => Err(Error::shape(format!(
                "network expects {:?} or [N, ..], got {s:?}",
                self.input
            ))),
        }
    }

    /// Forward pass that caches what [`WbcNet::backward`] needs. Dropout is
    /// active only in [`Mode::Train`]. Returns softmax probabilities.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let batched = self.check_input(x)?;
        let mut h = if batched { x.clone() } else { with_batch_axis(x)? };
        for slot in &mut self.slots {
            let out = match &mut slot.layer {
                Layer::Conv(c) => c.forward(&h)?,
                Layer::Relu => relu(&h),
                Layer::MaxPool(p) => p.forward(&h)?,
                Layer::Dropout(d) => {
                    d.set_mode(mode);
                    d.apply(&h, &mut self.dropout_rng)?
                }
                Layer::Flatten => flatten(&h)?,
                Layer::Dense(d) => d.forward(&h)?,
                Layer::Softmax => softmax(&h),
            };
            slot.input = match slot.layer {
                Layer::Conv(_) | Layer::Relu | Layer::Dense(_) | Layer::Flatten => Some(h),
                _ => None,
            };
            h = out;
        }
        if batched {
            Ok(h)
        } else {
            let n = h.len();
            h.reshape(&[n])
        }
    }

    /// Inference without caches or dropout; safe to call concurrently.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let batched = self.check_input(x)?;
        let mut h = if batched { x.clone() } else { with_batch_axis(x)? };
        for slot in &self.slots {
            h = match &slot.layer {
                Layer::Conv(c) => c.forward(&h)?,
                Layer::Relu => relu(&h),
                Layer::MaxPool(p) => p.infer(&h)?,
                Layer::Dropout(_) => h,
                Layer::Flatten => flatten(&h)?,
                Layer::Dense(d) => d.forward(&h)?,
                Layer::Softmax => softmax(&h),
            };
        }
        if batched {
            Ok(h)
        } else {
            let n = h.len();
            h.reshape(&[n])
        }
    }

    /// Backpropagates the gradient with respect to the pre-softmax logits,
    /// adding parameter gradients into each [`Param::grad`]. Returns the
    /// gradient with respect to the network input.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let last = self.slots.len() - 1;
        let mut g = match *grad_logits.shape() {
            [n] => grad_logits.clone().reshape(&[1, n])?,
            _ => grad_logits.clone(),
        };
        let single = grad_logits.rank() == 1;
        for slot in self.slots[..last].iter_mut().rev() {
            let missing = || Error::Usage("backward called before a caching forward".into());
            g = match &mut slot.layer {
                Layer::Conv(c) => {
                    let input = slot.input.as_ref().ok_or_else(missing)?;
                    let grads = c.backward(input, &g)?;
                    c.kernels.accumulate(&grads.kernels)?;
                    c.bias.accumulate(&grads.bias)?;
                    grads.input
                }
                Layer::Relu => relu_backward(slot.input.as_ref().ok_or_else(missing)?, &g)?,
                Layer::MaxPool(p) => p.backward(&g)?,
                Layer::Dropout(d) => d.backward(&g)?,
                Layer::Flatten => {
                    let input = slot.input.as_ref().ok_or_else(missing)?;
                    g.reshape(input.shape())?
                }
                Layer::Dense(d) => {
                    let input = slot.input.as_ref().ok_or_else(missing)?;
                    let grads = d.backward(input, &g)?;
                    d.weights.accumulate(&grads.weights)?;
                    d.bias.accumulate(&grads.bias)?;
                    grads.input
                }
                Layer::Softmax => {
                    return Err(Error::Usage("softmax may only end the stack".into()));
                }
            };
        }
        if single {
            let s = g.shape()[1..].to_vec();
            g.reshape(&s)
        } else {
            Ok(g)
        }
    }

    /// Most probable class for one `[C, H, W]` image; ties go to the lowest
    /// index.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Prediction> {
        if image.shape() != self.input {
            return Err(Error::shape(format!(
                "predict expects {:?}, got {:?}",
                self.input,
                image.shape()
            )));
        }
        let p = self.infer(image)?;
        let probabilities: Vec<f64> = p.data().iter().map(|v| v.as_f64()).collect();
        Ok(Prediction {
            class: argmax(&probabilities),
            probabilities,
        })
    }

    /// Copies parameter values (cast to `T`) from `values`, in stack order.
    pub fn set_parameters<U: Real>(&mut self, values: &[Tensor<U>]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::IncompatibleArchitecture(format!(
                "{} parameter tensors for a model with {}",
                values.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::IncompatibleArchitecture(format!(
                    "parameter {:?} vs stored {:?}",
                    p.value.shape(),
                    v.shape()
                )));
            }
        }
        for (p, v) in params.iter_mut().zip(values) {
            p.value = v.cast();
        }
        Ok(())
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn with_batch_axis<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut s = vec![1];
    s.extend_from_slice(x.shape());
    x.clone().reshape(&s)
}

/// `[N, C, H, W] -> [N, C*H*W]`, channel-major then row-major.
fn flatten<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = x.shape()[0];
    let features = x.len() / n;
    x.clone().reshape(&[n, features])
}

fn stack_err(spec: &LayerSpec, shape: &[usize]) -> Error {
    Error::IncompatibleArchitecture(format!("layer `{spec}` cannot follow activations {shape:?}"))
}
