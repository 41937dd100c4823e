//! Layer kernels: forward and backward passes for every layer the network uses.
//!
//! Activations are laid out `[N, C, H, W]` (or `[N, features]` after
//! flattening). Single-sample `[C, H, W]` / `[features]` inputs are accepted
//! everywhere and produce single-sample outputs.

mod activation;
mod conv;
mod dense;
mod dropout;
mod pool;

pub use activation::{relu, relu_backward, softmax};
pub use conv::{Conv2d, ConvGrads};
pub use dense::{Dense, DenseGrads};
pub use dropout::Dropout;
pub use pool::MaxPool2d;

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Real> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = value.map(|_| T::zero());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }

    pub(crate) fn accumulate(&mut self, grad: &Tensor<T>) -> Result<()> {
        if grad.shape() != self.value.shape() {
            return Err(Error::shape(format!(
                "gradient {:?} for parameter {:?}",
                grad.shape(),
                self.value.shape()
            )));
        }
        for (g, &d) in self.grad.data_mut().iter_mut().zip(grad.data()) {
            *g += d;
        }
        Ok(())
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `U(-l, l)` with `l = sqrt(6 / fan_in)`, for layers feeding ReLU.
    HeUniform,
    /// `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
    GlorotUniform,
    /// Glorot-uniform with the limit halved.
    GlorotUniformHalf,
}

impl Init {
    pub fn limit(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            Init::HeUniform => (6.0 / fan_in as f64).sqrt(),
            Init::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            Init::GlorotUniformHalf => 0.5 * Init::GlorotUniform.limit(fan_in, fan_out),
        }
    }

    pub(crate) fn fill<T: Real>(self, t: &mut Tensor<T>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let l = self.limit(fan_in, fan_out);
        for x in t.data_mut() {
            *x = T::lit(rng.gen_range(-l..l));
        }
    }
}

/// Splits a 4-D batch (or a 3-D single sample) into `(n, c, h, w)`.
pub(crate) fn batch_dims(t: &Tensor<impl Real>) -> Result<(usize, usize, usize, usize, bool)> {
    match *t.shape() {
        [c, h, w] => Ok((1, c, h, w, false)),
        [n, c, h, w] => Ok((n, c, h, w, true)),
        _ => Err(Error::shape(format!(
            "expected [C,H,W] or [N,C,H,W], got {:?}",
            t.shape()
        ))),
    }
}

pub(crate) fn image_shape(n: usize, c: usize, h: usize, w: usize, batched: bool) -> Vec<usize> {
    if batched {
        vec![n, c, h, w]
    } else {
        vec![c, h, w]
    }
}

/// Valid-window output length: `floor((len + 2*pad - window) / stride) + 1`.
pub(crate) fn window_out(len: usize, window: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = len + 2 * pad;
    if padded < window {
        return Err(Error::InvalidGeometry(format!(
            "window {window} does not fit input extent {len} with padding {pad}"
        )));
    }
    Ok((padded - window) / stride + 1)
}
