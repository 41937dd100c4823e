use rand::Rng;

use super::{Init, Param};
use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::{gemm, Gemm, Tensor};

/// Rows of the weight gradient handled per parallel task.
const ROW_BLOCK: usize = 2048;

/// Fully connected layer computing `x * W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Real> {
    pub weights: Param<T>,
    pub bias: Param<T>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T: Real> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(in_features: usize, out_features: usize) -> Result<Self> {
        Self::from_params(
            Tensor::zeros(&[in_features, out_features])?,
            Tensor::zeros(&[out_features])?,
        )
    }

    pub fn from_params(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weights.rank() != 2 || bias.shape() != [weights.shape()[1]] {
            return Err(Error::shape(format!(
                "dense weights {:?} with bias {:?}",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Dense {
            weights: Param::new(weights),
            bias: Param::new(bias),
        })
    }

    pub fn init(&mut self, scheme: Init, rng: &mut impl Rng) {
        let (i, o) = (self.in_features(), self.out_features());
        scheme.fill(&mut self.weights.value, i, o, rng);
        self.bias.value.data_mut().iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn in_features(&self) -> usize {
        self.weights.value.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weights.value.shape()[1]
    }

    fn rows(&self, input: &Tensor<T>) -> Result<(usize, bool)> {
        match *input.shape() {
            [i] if i == self.in_features() => Ok((1, false)),
            [n, i] if i == self.in_features() => Ok((n, true)),
            _ => Err(Error::shape(format!(
                "dense expects {} input features, got shape {:?}",
                self.in_features(),
                input.shape()
            ))),
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, batched) = self.rows(input)?;
        let (i, o) = (self.in_features(), self.out_features());
        let mut out: Vec<T> = self.bias.value.data().repeat(n);
        gemm(
            Gemm::new(n, i, o),
            input.data(),
            (i, 1),
            self.weights.value.data(),
            (o, 1),
            T::one(),
            &mut out,
            o,
        );
        let shape = if batched { vec![n, o] } else { vec![o] };
        Tensor::from_vec(&shape, out)
    }

    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<DenseGrads<T>> {
        let (n, batched) = self.rows(input)?;
        let (i, o) = (self.in_features(), self.out_features());
        let expected = if batched { vec![n, o] } else { vec![o] };
        if grad_out.shape() != expected.as_slice() {
            return Err(Error::shape(format!(
                "dense grad_out {:?}, expected {expected:?}",
                grad_out.shape()
            )));
        }
        let x = input.data();
        let gy = grad_out.data();

        // dW = x^T * gy, computed in fixed row blocks of W.
        let mut gw = vec![T::zero(); i * o];
        par::for_each_chunk_mut(&mut gw, ROW_BLOCK * o, |blk, rows| {
            let r0 = blk * ROW_BLOCK;
            let m = rows.len() / o;
            gemm(Gemm::new(m, n, o), &x[r0..], (1, i), gy, (o, 1), T::zero(), rows, o);
        });

        let mut gb = vec![T::zero(); o];
        for row in gy.chunks(o) {
            gb.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
        }

        let mut gx = vec![T::zero(); n * i];
        gemm(
            Gemm::new(n, o, i),
            gy,
            (o, 1),
            self.weights.value.data(),
            (1, o),
            T::zero(),
            &mut gx,
            i,
        );
        Ok(DenseGrads {
            input: Tensor::from_vec(input.shape(), gx)?,
            weights: Tensor::from_vec(&[i, o], gw)?,
            bias: Tensor::from_vec(&[o], gb)?,
        })
    }
}
