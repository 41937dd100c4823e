use std::path::Path;

use image::{ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// File extensions picked up when scanning a data tree.
pub const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "bmp"];

pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
        .unwrap_or(false)
}

fn decode_err(path: &Path, reason: impl ToString) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Decodes a JPEG or BMP file into an 8-bit RGB buffer.
pub fn decode_rgb(path: &Path) -> Result<image::RgbImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Jpeg) | Some(ImageFormat::Bmp) => {}
        Some(other) => return Err(Error::Format(format!("{}: {other:?}", path.display()))),
        None => return Err(Error::Format(format!("{}: unrecognized", path.display()))),
    }
    let img = reader.decode().map_err(|e| decode_err(path, e))?;
    Ok(img.into_rgb8())
}

/// `[3, H, W]` tensor with channel values `byte / 255`.
pub fn rgb_to_tensor(img: &image::RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut data = vec![0f32; 3 * h * w];
    for (p, px) in raw.chunks_exact(3).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * h * w + p] = v as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("decoded image has non-zero size")
}

/// Loads an image file as a `[3, H, W]` tensor in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = decode_rgb(path)?;
    if img.width() == 0 || img.height() == 0 {
        return Err(decode_err(path, "empty image"));
    }
    Ok(rgb_to_tensor(&img))
}

/// Writes a `[3, H, W]` tensor in `[0, 1]` as an image; the format follows
/// the file extension.
pub fn save_image(pixels: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let [3, h, w] = *pixels.shape() else {
        return Err(Error::shape(format!("expected [3,H,W], got {:?}", pixels.shape())));
    };
    let x = pixels.data();
    let mut raw = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            raw.push((x[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized from shape");
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 24-bit bottom-up BMP assembled byte by byte.
    fn bmp_2x2(pixels: [[u8; 3]; 4]) -> Vec<u8> {
        let row = 2 * 3 + 2; // padded to 4 bytes
        let size = 54 + row * 2;
        let mut b = Vec::new();
        b.extend_from_slice(b"BM");
        b.extend_from_slice(&(size as u32).to_le_bytes());
        b.extend_from_slice(&[0; 4]);
        b.extend_from_slice(&54u32.to_le_bytes());
        b.extend_from_slice(&40u32.to_le_bytes());
        b.extend_from_slice(&2i32.to_le_bytes());
        b.extend_from_slice(&2i32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&24u16.to_le_bytes());
        b.extend_from_slice(&[0; 4]);
        b.extend_from_slice(&((row * 2) as u32).to_le_bytes());
        b.extend_from_slice(&[0; 16]);
        // bottom row first, BGR order
        for r in [1, 0] {
            for c in 0..2 {
                let [red, green, blue] = pixels[r * 2 + c];
                b.extend_from_slice(&[blue, green, red]);
            }
            b.extend_from_slice(&[0, 0]);
        }
        b
    }

    #[test]
    fn hand_built_bmp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bmp");
        let px = [[255, 0, 0], [0, 255, 0], [0, 0, 255], [10, 20, 30]];
        std::fs::write(&path, bmp_2x2(px)).unwrap();
        let t = load_image(&path).unwrap();
        assert_eq!(t.shape(), &[3, 2, 2]);
        for (p, rgb) in px.iter().enumerate() {
            for (c, &v) in rgb.iter().enumerate() {
                assert_eq!(t.data()[c * 4 + p], v as f32 / 255.0);
            }
        }
    }

    #[test]
    fn white_image() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bmp");
        std::fs::write(&path, bmp_2x2([[255; 3]; 4])).unwrap();
        assert!(load_image(&path).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn grayscale_jpeg_has_equal_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jpg");
        let img = image::RgbImage::from_fn(32, 24, |x, y| {
            let v = ((x * 7 + y * 3) % 256) as u8;
            image::Rgb([v, v, v])
        });
        img.save(&path).unwrap();
        let t = load_image(&path).unwrap();
        assert_eq!(t.shape(), &[3, 24, 32]);
        let plane = 24 * 32;
        for p in 0..plane {
            let (r, g, b) = (t.data()[p], t.data()[plane + p], t.data()[2 * plane + p]);
            assert!((r - g).abs() <= 2.0 / 255.0 + 1e-6 && (r - b).abs() <= 2.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn rejects_other_formats_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("x.bmp");
        std::fs::write(&png, b"\x89PNG\r\n\x1a\n0000000000000000").unwrap();
        assert!(matches!(load_image(&png), Err(Error::Format(_))));

        let trunc = dir.path().join("t.bmp");
        let mut bytes = bmp_2x2([[1; 3]; 4]);
        bytes.truncate(60);
        std::fs::write(&trunc, bytes).unwrap();
        assert!(matches!(load_image(&trunc), Err(Error::Decode { .. })));
    }

    #[test]
    fn extension_filter() {
        assert!(is_image_path(Path::new("a/b.JPG")));
        assert!(is_image_path(Path::new("b.bmp")));
        assert!(!is_image_path(Path::new("b.png")));
        assert!(!is_image_path(Path::new("README")));
    }
}
