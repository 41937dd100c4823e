use crate::error::{Error, Result};
use crate::nn::Param;
use crate::real::Real;
use crate::tensor::Tensor;

/// Adam hyperparameters. `Default` gives the usual framework defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("adam config {self:?}")))
        }
    }
}

/// Adam with bias correction. Moment buffers are created on the first step
/// and must keep matching the parameter shapes afterwards.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter using its accumulated gradient.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        self.ensure_moments(params.iter().map(|p| p.value.shape()))?;
        self.step += 1;
        let (lr, b1, b2, eps, c1, c2) = self.coefficients();
        for (i, p) in params.iter_mut().enumerate() {
            if p.grad.shape() != p.value.shape() {
                return Err(Error::shape(format!(
                    "gradient {:?} for parameter {:?}",
                    p.grad.shape(),
                    p.value.shape()
                )));
            }
            let Param { value, grad } = &mut **p;
            update(
                value.data_mut(),
                grad.data(),
                self.first[i].data_mut(),
                self.second[i].data_mut(),
                (lr, b1, b2, eps, c1, c2),
            );
        }
        Ok(())
    }

    /// Single-tensor form: one optimizer step for one parameter tensor.
    pub fn step_tensor(&mut self, params: &Tensor<T>, grads: &Tensor<T>) -> Result<Tensor<T>> {
        if params.shape() != grads.shape() {
            return Err(Error::shape(format!(
                "params {:?} vs grads {:?}",
                params.shape(),
                grads.shape()
            )));
        }
        let mut p = Param {
            value: params.clone(),
            grad: grads.clone(),
        };
        self.step(&mut [&mut p])?;
        Ok(p.value)
    }

    fn ensure_moments<'a>(&mut self, shapes: impl ExactSizeIterator<Item = &'a [usize]>) -> Result<()> {
        if self.first.is_empty() {
            for s in shapes {
                self.first.push(Tensor::zeros(s)?);
                self.second.push(Tensor::zeros(s)?);
            }
            return Ok(());
        }
        if shapes.len() != self.first.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                shapes.len()
            )));
        }
        for (s, m) in shapes.zip(&self.first) {
            if s != m.shape() {
                return Err(Error::shape(format!("parameter {s:?} vs moment {:?}", m.shape())));
            }
        }
        Ok(())
    }

    fn coefficients(&self) -> (T, T, T, T, T, T) {
        let c = &self.config;
        let t = self.step as i32;
        (
            T::lit(c.learning_rate),
            T::lit(c.beta1),
            T::lit(c.beta2),
            T::lit(c.epsilon),
            T::lit(1.0 / (1.0 - c.beta1.powi(t))),
            T::lit(1.0 / (1.0 - c.beta2.powi(t))),
        )
    }
}

fn update<T: Real>(
    theta: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    (lr, b1, b2, eps, c1, c2): (T, T, T, T, T, T),
) {
    let one = T::one();
    for (((x, &g), m), v) in theta.iter_mut().zip(grad).zip(m).zip(v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m * c1;
        let v_hat = *v * c2;
        *x -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
