use super::{batch_dims, image_shape, window_out};
use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

/// Max pooling without padding. Ties go to the first maximum in row-major
/// window order.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pool_h: usize,
    pool_w: usize,
    stride: usize,
    cache: Option<PoolCache>,
}

#[derive(Debug, Clone)]
struct PoolCache {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    /// Flat in-plane index of each output's source element.
    argmax: Vec<u32>,
}

impl MaxPool2d {
    pub fn new(pool_h: usize, pool_w: usize, stride: usize) -> Result<Self> {
        if pool_h == 0 || pool_w == 0 || stride == 0 {
            return Err(Error::InvalidParameter(format!(
                "pool {pool_h}x{pool_w} stride {stride}"
            )));
        }
        Ok(MaxPool2d {
            pool_h,
            pool_w,
            stride,
            cache: None,
        })
    }

    pub fn pool(&self) -> (usize, usize) {
        (self.pool_h, self.pool_w)
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            window_out(h, self.pool_h, self.stride, 0)?,
            window_out(w, self.pool_w, self.stride, 0)?,
        ))
    }

    /// Forward pass that records argmax positions for [`MaxPool2d::backward`].
    pub fn forward<T: Real>(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, argmax) = self.run(input)?;
        self.cache = Some(PoolCache {
            input_shape: input.shape().to_vec(),
            output_shape: out.shape().to_vec(),
            argmax,
        });
        Ok(out)
    }

    /// Forward pass without touching the cache.
    pub fn infer<T: Real>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(input)?.0)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn run<T: Real>(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
        let (n, c, h, w, batched) = batch_dims(input)?;
        let (oh, ow) = self.output_hw(h, w)?;
        let (plane_in, plane_out) = (h * w, oh * ow);
        let x = input.data();
        let mut out = vec![T::zero(); n * c * plane_out];
        let argmax = par::map_chunks_mut(&mut out, plane_out, |p, y| {
            let src = &x[p * plane_in..(p + 1) * plane_in];
            let mut idx = Vec::with_capacity(plane_out);
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (oy * self.stride, ox * self.stride);
                    let mut best = y0 * w + x0;
                    for i in 0..self.pool_h {
                        for j in 0..self.pool_w {
                            let k = (y0 + i) * w + x0 + j;
                            if src[k] > src[best] {
                                best = k;
                            }
                        }
                    }
                    y[oy * ow + ox] = src[best];
                    idx.push(best as u32);
                }
            }
            idx
        });
        let out = Tensor::from_vec(&image_shape(n, c, oh, ow, batched), out)?;
        Ok((out, argmax.concat()))
    }

    /// Routes each output gradient to its cached argmax, summing where
    /// overlapping windows share a maximum.
    pub fn backward<T: Real>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("max-pool backward called before forward".into()))?;
        if grad_out.shape() != cache.output_shape.as_slice() {
            return Err(Error::shape(format!(
                "pool grad_out {:?}, cached output {:?}",
                grad_out.shape(),
                cache.output_shape
            )));
        }
        let plane = |s: &[usize]| s[s.len() - 2] * s[s.len() - 1];
        let (plane_in, plane_out) = (plane(&cache.input_shape), plane(&cache.output_shape));
        let gy = grad_out.data();
        let mut grad_in = vec![T::zero(); cache.input_shape.iter().product()];
        par::for_each_chunk_mut(&mut grad_in, plane_in, |p, gx| {
            let idx = &cache.argmax[p * plane_out..(p + 1) * plane_out];
            for (&k, &g) in idx.iter().zip(&gy[p * plane_out..(p + 1) * plane_out]) {
                gx[k as usize] += g;
            }
        });
        Tensor::from_vec(&cache.input_shape, grad_in)
    }
}
