use rand::Rng;

use super::{batch_dims, image_shape, window_out, Init, Param};
use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::{gemm, Gemm, Tensor};

/// 2-D cross-correlation layer with per-filter bias.
///
/// Kernels are `[out_channels, in_channels, kh, kw]`; the forward pass is
/// lowered to one GEMM per sample over an im2col patch matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T: Real> {
    pub kernels: Param<T>,
    pub bias: Param<T>,
    stride: usize,
    padding: usize,
}

/// Gradients produced by [`Conv2d::backward`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Real> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

impl<T: Real> Conv2d<T> {
    /// Zero-initialized layer.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let kernels = Tensor::zeros(&[out_channels, in_channels, kernel.0, kernel.1])?;
        let bias = Tensor::zeros(&[out_channels])?;
        Self::from_params(kernels, bias, stride, padding)
    }

    pub fn from_params(kernels: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        if kernels.rank() != 4 || bias.shape() != [kernels.shape()[0]] {
            return Err(Error::shape(format!(
                "conv kernels {:?} with bias {:?}",
                kernels.shape(),
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidParameter("conv stride must be >= 1".into()));
        }
        Ok(Conv2d {
            kernels: Param::new(kernels),
            bias: Param::new(bias),
            stride,
            padding,
        })
    }

    pub fn init(&mut self, scheme: Init, rng: &mut impl Rng) {
        let [f, c, kh, kw] = self.dims();
        scheme.fill(&mut self.kernels.value, c * kh * kw, f * kh * kw, rng);
        self.bias.value.data_mut().iter_mut().for_each(|b| *b = T::zero());
    }

    /// `[out_channels, in_channels, kh, kw]`
    pub fn dims(&self) -> [usize; 4] {
        let s = self.kernels.value.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let [_, _, kh, kw] = self.dims();
        Ok((
            window_out(h, kh, self.stride, self.padding)?,
            window_out(w, kw, self.stride, self.padding)?,
        ))
    }

    fn geometry(&self, c: usize, h: usize, w: usize) -> Result<Geometry> {
        let [_, cin, kh, kw] = self.dims();
        if c != cin {
            return Err(Error::shape(format!("conv expects {cin} input channels, got {c}")));
        }
        let (oh, ow) = self.output_hw(h, w)?;
        Ok(Geometry {
            c,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            stride: self.stride,
            pad: self.padding,
        })
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w, batched) = batch_dims(input)?;
        let g = self.geometry(c, h, w)?;
        let f = self.dims()[0];
        let (in_len, out_len) = (c * h * w, f * g.positions());
        let kernels = self.kernels.value.data();
        let bias = self.bias.value.data();
        let x = input.data();

        let mut out = vec![T::zero(); n * out_len];
        par::for_each_chunk_mut(&mut out, out_len, |b, y| {
            let cols = im2col(&x[b * in_len..(b + 1) * in_len], &g);
            for (row, &bv) in y.chunks_mut(g.positions()).zip(bias) {
                row.iter_mut().for_each(|v| *v = bv);
            }
            gemm(
                Gemm::new(f, g.patch(), g.positions()),
                kernels,
                (g.patch(), 1),
                &cols,
                (g.positions(), 1),
                T::one(),
                y,
                g.positions(),
            );
        });
        Tensor::from_vec(&image_shape(n, f, g.oh, g.ow, batched), out)
    }

    /// Gradients of a scalar loss given `grad_out = dL/d(forward(input))`.
    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        let (n, c, h, w, batched) = batch_dims(input)?;
        let g = self.geometry(c, h, w)?;
        let f = self.dims()[0];
        let expected = image_shape(n, f, g.oh, g.ow, batched);
        if grad_out.shape() != expected.as_slice() {
            return Err(Error::shape(format!(
                "conv grad_out {:?}, expected {expected:?}",
                grad_out.shape()
            )));
        }
        let (in_len, out_len) = (c * h * w, f * g.positions());
        let (patch, positions) = (g.patch(), g.positions());
        let kernels = self.kernels.value.data();
        let x = input.data();
        let gy = grad_out.data();

        let mut grad_input = vec![T::zero(); n * in_len];
        let per_sample = par::map_chunks_mut(&mut grad_input, in_len, |b, gx| {
            let gy_b = &gy[b * out_len..(b + 1) * out_len];
            let cols = im2col(&x[b * in_len..(b + 1) * in_len], &g);

            let mut gk = vec![T::zero(); f * patch];
            gemm(
                Gemm::new(f, positions, patch),
                gy_b,
                (positions, 1),
                &cols,
                (1, positions),
                T::zero(),
                &mut gk,
                patch,
            );
            let gb: Vec<T> = gy_b.chunks(positions).map(|row| row.iter().copied().sum()).collect();

            let mut gcols = cols;
            gemm(
                Gemm::new(patch, f, positions),
                kernels,
                (1, patch),
                gy_b,
                (positions, 1),
                T::zero(),
                &mut gcols,
                positions,
            );
            col2im(&gcols, &g, gx);
            (gk, gb)
        });

        // Fixed sample order keeps the reduction independent of scheduling.
        let mut gk_total = vec![T::zero(); f * patch];
        let mut gb_total = vec![T::zero(); f];
        for (gk, gb) in &per_sample {
            gk_total.iter_mut().zip(gk).for_each(|(a, &b)| *a += b);
            gb_total.iter_mut().zip(gb).for_each(|(a, &b)| *a += b);
        }
        Ok(ConvGrads {
            input: Tensor::from_vec(input.shape(), grad_input)?,
            kernels: Tensor::from_vec(self.kernels.value.shape(), gk_total)?,
            bias: Tensor::from_vec(&[f], gb_total)?,
        })
    }
}

/// Patch matrix `[c*kh*kw, oh*ow]` for one sample; out-of-range taps are 0.
fn im2col<T: Real>(x: &[T], g: &Geometry) -> Vec<T> {
    let positions = g.positions();
    let mut cols = vec![T::zero(); g.patch() * positions];
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *v = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds a patch-matrix gradient back onto one sample's input.
fn col2im<T: Real>(cols: &[T], g: &Geometry, gx: &mut [T]) {
    let positions = g.positions();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut gx[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}
