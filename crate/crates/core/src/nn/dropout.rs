use rand::Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Inverted dropout: in training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1 / (1 - rate)`, so
/// inference is the identity.
#[derive(Debug, Clone)]
pub struct Dropout<T: Real> {
    rate: f64,
    mode: Mode,
    mask: Option<Vec<T>>,
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("dropout rate {rate} outside [0, 1)")))
    }
}

impl<T: Real> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Dropout {
            rate,
            mode: Mode::Infer,
            mask: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        self.mask = None;
    }

    pub fn apply(&mut self, input: &Tensor<T>, rng: &mut impl Rng) -> Result<Tensor<T>> {
        check_rate(self.rate)?;
        if self.mode == Mode::Infer {
            self.mask = None;
            return Ok(input.clone());
        }
        let keep = T::lit(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..input.len())
            .map(|_| if rng.gen::<f64>() < self.rate { T::zero() } else { keep })
            .collect();
        let out = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        self.mask = Some(mask);
        Tensor::from_vec(input.shape(), out)
    }

    pub fn backward(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match (&self.mask, self.mode) {
            (_, Mode::Infer) => Ok(grad_out.clone()),
            (None, Mode::Train) => Err(Error::Usage("dropout backward called before a training forward".into())),
            (Some(mask), Mode::Train) => {
                if mask.len() != grad_out.len() {
                    return Err(Error::shape(format!(
                        "dropout grad of {} elements, mask of {}",
                        grad_out.len(),
                        mask.len()
                    )));
                }
                let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Tensor::from_vec(grad_out.shape(), data)
            }
        }
    }

    pub fn clear_cache(&mut self) {
        self.mask = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp() -> Tensor {
        Tensor::from_fn(&[2, 3, 4], |i| i as f64 - 5.0).unwrap()
    }

    #[test]
    fn zero_rate_is_identity_in_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dropout::new(0.0).unwrap();
        d.set_mode(Mode::Train);
        assert_eq!(d.apply(&ramp(), &mut rng).unwrap(), ramp());
    }

    #[test]
    fn inference_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dropout::new(0.2).unwrap();
        assert_eq!(d.apply(&ramp(), &mut rng).unwrap(), ramp());
        assert_eq!(d.backward(&ramp()).unwrap(), ramp());
    }

    #[test]
    fn survivors_scaled_by_inverse_keep() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = Dropout::new(0.2).unwrap();
        d.set_mode(Mode::Train);
        let x: Tensor = Tensor::full(&[1000], 1.0).unwrap();
        let y = d.apply(&x, &mut rng).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
        let g = d.backward(&x).unwrap();
        assert_eq!(g, y);
    }

    #[test]
    fn rejects_bad_rates() {
        assert!(matches!(Dropout::<f64>::new(1.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(Dropout::<f64>::new(-0.1), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn training_backward_needs_forward() {
        let mut d = Dropout::<f64>::new(0.2).unwrap();
        d.set_mode(Mode::Train);
        assert!(matches!(d.backward(&ramp()), Err(Error::Usage(_))));
    }

    #[test]
    fn expectation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut d = Dropout::new(0.2).unwrap();
        d.set_mode(Mode::Train);
        let x = Tensor::full(&[4], 3.0).unwrap();
        let mut acc = [0.0; 4];
        let trials = 10_000;
        for _ in 0..trials {
            let y = d.apply(&x, &mut rng).unwrap();
            acc.iter_mut().zip(y.data()).for_each(|(a, &v)| *a += v);
        }
        for a in acc {
            let mean = a / trials as f64;
            assert!((mean - 3.0).abs() / 3.0 < 0.02, "{mean}");
        }
    }
}
