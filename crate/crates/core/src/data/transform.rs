use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear resize of a `[C, H, W]` image using half-pixel centers with edge
/// clamping. Same-size input is returned unchanged.
pub fn resize(image: &Tensor<f32>, target_h: usize, target_w: usize) -> Result<Tensor<f32>> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::shape(format!("expected [C,H,W], got {:?}", image.shape())));
    };
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidShape(vec![c, target_h, target_w]));
    }
    if (h, w) == (target_h, target_w) {
        return Ok(image.clone());
    }
    let taps = |dst: usize, src: usize, out: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * src as f64 / out as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(src - 1), s - i0 as f64)
    };
    let ys: Vec<_> = (0..target_h).map(|y| taps(y, h, target_h)).collect();
    let xs: Vec<_> = (0..target_w).map(|x| taps(x, w, target_w)).collect();
    let src = image.data();
    let mut out = Vec::with_capacity(c * target_h * target_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let at = |y: usize, x: usize| plane[y * w + x] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Tensor::from_vec(&[c, target_h, target_w], out)
}

/// Clockwise quarter turns supported by [`rotate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rotation {
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 3] = [Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn from_degrees(degrees: u32) -> Result<Self> {
        match degrees {
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            other => Err(Error::UnsupportedAngle(other)),
        }
    }

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    /// File-name suffix used for rotated copies, e.g. `_r90`.
    pub fn suffix(self) -> String {
        format!("_r{}", self.degrees())
    }
}

/// Rotates each `h x w` plane of a channel-major buffer; returns the new
/// `(height, width)`. A 90 degree turn sends `(r, c)` to `(c, h - 1 - r)`.
pub fn rotate_planes<P: Copy>(
    data: &[P],
    channels: usize,
    h: usize,
    w: usize,
    rotation: Rotation,
) -> (Vec<P>, usize, usize) {
    let (oh, ow) = match rotation {
        Rotation::R180 => (h, w),
        Rotation::R90 | Rotation::R270 => (w, h),
    };
    let mut out = Vec::with_capacity(data.len());
    for ch in 0..channels {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let (r, c) = match rotation {
                    Rotation::R90 => (h - 1 - x, y),
                    Rotation::R180 => (h - 1 - y, w - 1 - x),
                    Rotation::R270 => (x, w - 1 - y),
                };
                out.push(plane[r * w + c]);
            }
        }
    }
    (out, oh, ow)
}

/// Lossless rotation of a `[C, H, W]` image by 90, 180 or 270 degrees.
pub fn rotate(image: &Tensor<f32>, degrees: u32) -> Result<Tensor<f32>> {
    let rotation = Rotation::from_degrees(degrees)?;
    let [c, h, w] = *image.shape() else {
        return Err(Error::shape(format!("expected [C,H,W], got {:?}", image.shape())));
    };
    let (data, oh, ow) = rotate_planes(image.data(), c, h, w, rotation);
    Tensor::from_vec(&[c, oh, ow], data)
}
