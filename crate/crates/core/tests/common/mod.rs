//! Synthetic white-cell-like fixtures: one textured coloured blob per image
//! on a noisy pale background, with colour and texture fixed per class.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wbcnet::data::rgb_to_tensor;
use wbcnet::Tensor;

pub const CLASSES: [&str; 4] = ["EOSINOPHIL", "LYMPHOCYTE", "MONOCYTE", "NEUTROPHIL"];

const COLORS: [[f32; 3]; 4] = [
    [0.85, 0.25, 0.45],
    [0.25, 0.30, 0.80],
    [0.30, 0.70, 0.35],
    [0.90, 0.60, 0.15],
];

fn texture(class: usize, y: f32, x: f32) -> f32 {
    match class % 4 {
        0 => 1.0,
        1 => {
            if (y as i32 / 3) % 2 == 0 {
                1.0
            } else {
                0.6
            }
        }
        2 => {
            if ((y as i32 / 4) + (x as i32 / 4)) % 2 == 0 {
                1.0
            } else {
                0.55
            }
        }
        _ => 0.8 + 0.2 * ((x * 0.7).sin() * (y * 0.7).cos()),
    }
}

/// `width x height` blob image of `class`.
pub fn blob_image(class: usize, width: u32, height: u32, rng: &mut impl Rng) -> RgbImage {
    let (w, h) = (width as f32, height as f32);
    let side = w.min(h);
    let radius = rng.gen_range(0.15..0.3) * side;
    let cy = rng.gen_range(radius..h - radius);
    let cx = rng.gen_range(radius..w - radius);
    let color = COLORS[class % 4];
    RgbImage::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f32, y as f32);
        let inside = (xf - cx).powi(2) + (yf - cy).powi(2) < radius * radius;
        let px: [u8; 3] = std::array::from_fn(|c| {
            let base = if inside {
                color[c] * texture(class, yf, xf)
            } else {
                [0.92, 0.86, 0.88][c]
            };
            let v = base + rng.gen_range(-0.04..0.04);
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        });
        Rgb(px)
    })
}

/// `[n, 3, side, side]` batch of blobs with labels cycling over the classes.
pub fn blob_batch(n: usize, side: u32, seed: u64) -> (Tensor<f32>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % CLASSES.len()).collect();
    let mut data = Vec::new();
    for &label in &labels {
        data.extend_from_slice(rgb_to_tensor(&blob_image(label, side, side, &mut rng)).data());
    }
    let s = side as usize;
    (Tensor::from_vec(&[n, 3, s, s], data).unwrap(), labels)
}

/// Writes `<root>/<CLASS>/img_NNN.<ext>` for `per_class` images per class.
pub fn write_tree(root: &Path, per_class: usize, side: u32, ext: &str, seed: u64) -> Vec<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::new();
    for (class, name) in CLASSES.iter().enumerate() {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            let path = dir.join(format!("img_{i:03}.{ext}"));
            blob_image(class, side, side, &mut rng).save(&path).unwrap();
            paths.push(path);
        }
    }
    paths
}

/// Every file below `root`, sorted.
pub fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = fs::read_dir(root) {
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                out.extend(files_under(&p));
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}
