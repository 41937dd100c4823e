//! `.wbcn` checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "WBCN"                 magic
//! u32                    version (1)
//! u32 + bytes            descriptor text (UTF-8)
//! u32                    parameter block count
//! per block: u64 + f32*  element count, then raw values
//! u32                    CRC-32 of every preceding byte
//! ```
//!
//! The descriptor holds the architecture lines produced by
//! [`WbcNet::descriptor`], a `[meta]` line, then `key=value` metadata lines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::net::WbcNet;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"WBCN";
pub const VERSION: u32 = 1;
const META_MARKER: &str = "[meta]";

/// Training context stored next to the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seed: u64,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Architecture lines as produced by [`WbcNet::descriptor`].
    pub architecture: String,
    pub params: Vec<Tensor<f32>>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    /// Snapshot of a model's parameters, narrowed to `f32`.
    pub fn capture<T: Real>(model: &WbcNet<T>, meta: CheckpointMeta) -> Self {
        Checkpoint {
            architecture: model.descriptor(),
            params: model.params().iter().map(|p| p.value.cast()).collect(),
            meta,
        }
    }

    /// Builds a fresh model from the stored architecture and weights.
    pub fn to_model<T: Real>(&self) -> Result<WbcNet<T>> {
        let mut model = WbcNet::from_descriptor(&self.architecture)?;
        model.set_parameters(&self.params)?;
        model.reseed_dropout(self.meta.seed);
        Ok(model)
    }

    /// Loads the weights into an existing model whose architecture must
    /// match exactly.
    pub fn restore_into<T: Real>(&self, model: &mut WbcNet<T>) -> Result<()> {
        if model.descriptor() != self.architecture {
            return Err(Error::IncompatibleArchitecture(format!(
                "checkpoint architecture:\n{}model architecture:\n{}",
                self.architecture,
                model.descriptor()
            )));
        }
        model.set_parameters(&self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut text = self.architecture.clone();
        if !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(META_MARKER);
        text.push('\n');
        let m = &self.meta;
        text.push_str(&format!("epoch={}\n", m.epoch));
        text.push_str(&format!("train_loss={:?}\n", m.train_loss));
        text.push_str(&format!("val_loss={:?}\n", m.val_loss));
        text.push_str(&format!("seed={}\n", m.seed));
        for c in &m.class_names {
            text.push_str(&format!("class={c}\n"));
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.len() as u64).to_le_bytes());
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses and validates a complete checkpoint image. Nothing is returned
    /// unless every check passes.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let decode = |reason: String| Error::Decode {
            path: origin.to_path_buf(),
            reason,
        };
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format(format!("{}: not a WBCN checkpoint", origin.display())));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported checkpoint version {version}",
                origin.display()
            )));
        }
        if bytes.len() < 12 {
            return Err(decode("truncated header".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(decode("checksum mismatch (corrupted or truncated file)".into()));
        }

        let mut r = Reader { buf: body, pos: 8 };
        let text_len = r.u32().ok_or_else(|| decode("truncated descriptor length".into()))? as usize;
        let text = r.take(text_len).ok_or_else(|| decode("truncated descriptor".into()))?;
        let text = std::str::from_utf8(text).map_err(|e| decode(format!("descriptor: {e}")))?;
        let (architecture, meta) = parse_text(text).map_err(decode)?;

        let count = r.u32().ok_or_else(|| decode("truncated block count".into()))? as usize;
        let shapes = WbcNet::<f32>::from_descriptor(&architecture)?
            .params()
            .iter()
            .map(|p| p.value.shape().to_vec())
            .collect::<Vec<_>>();
        if shapes.len() != count {
            return Err(decode(format!(
                "{count} parameter blocks for an architecture with {}",
                shapes.len()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for shape in &shapes {
            let n = r.u64().ok_or_else(|| decode("truncated block header".into()))? as usize;
            if n != shape.iter().product::<usize>() {
                return Err(decode(format!("block of {n} values for shape {shape:?}")));
            }
            let raw = r
                .take(n.checked_mul(4).ok_or_else(|| decode("block too large".into()))?)
                .ok_or_else(|| decode("truncated parameter block".into()))?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            params.push(Tensor::from_vec(shape, data)?);
        }
        if r.pos != body.len() {
            return Err(decode(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Checkpoint {
            architecture,
            params,
            meta,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

fn parse_text(text: &str) -> std::result::Result<(String, CheckpointMeta), String> {
    let (arch, meta_text) = text
        .split_once(&format!("{META_MARKER}\n"))
        .ok_or("missing metadata section")?;
    let mut meta = CheckpointMeta {
        epoch: 0,
        train_loss: 0.0,
        val_loss: 0.0,
        seed: 0,
        class_names: Vec::new(),
    };
    for line in meta_text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("bad metadata line {line:?}"))?;
        let bad = || format!("bad value in {line:?}");
        match k {
            "epoch" => meta.epoch = v.parse().map_err(|_| bad())?,
            "train_loss" => meta.train_loss = v.parse().map_err(|_| bad())?,
            "val_loss" => meta.val_loss = v.parse().map_err(|_| bad())?,
            "seed" => meta.seed = v.parse().map_err(|_| bad())?,
            "class" => meta.class_names.push(v.to_string()),
            _ => return Err(format!("unknown metadata key {k:?}")),
        }
    }
    Ok((arch.to_string(), meta))
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let tmp: PathBuf = {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        path.with_file_name(name)
    };
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&checkpoint.to_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            epoch: 3,
            train_loss: 0.1234567890123,
            val_loss: 0.25,
            seed: 42,
            class_names: ["EOSINOPHIL", "LYMPHOCYTE", "MONOCYTE", "NEUTROPHIL"]
                .map(String::from)
                .to_vec(),
        }
    }

    fn small(n_classes: usize, seed: u64) -> WbcNet<f32> {
        WbcNet::from_architecture(&Architecture::wbc(n_classes).with_input([3, 20, 20]), seed).unwrap()
    }

    #[test]
    fn save_then_load_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.wbcn");
        let ckpt = Checkpoint::capture(&small(4, 1), meta());
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        assert!(!dir.path().join("best.wbcn.tmp").exists());
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"WBCN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    }

    #[test]
    fn truncation_and_corruption_rejected() {
        let bytes = Checkpoint::capture(&small(4, 2), meta()).to_bytes();
        let origin = Path::new("x.wbcn");
        for cut in [0, 3, 8, 11, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut], origin).is_err(), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() - 100;
        flipped[mid] ^= 0x10;
        assert!(matches!(
            Checkpoint::from_bytes(&flipped, origin),
            Err(Error::Decode { .. })
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic, origin), Err(Error::Format(_))));
        let mut version = bytes;
        version[4] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&version, origin),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn wrong_class_count_is_incompatible() {
        let ckpt = Checkpoint::capture(&small(4, 1), meta());
        let mut five = small(5, 1);
        assert!(matches!(
            ckpt.restore_into(&mut five),
            Err(Error::IncompatibleArchitecture(_))
        ));
        let mut four = small(4, 9);
        ckpt.restore_into(&mut four).unwrap();
        assert_eq!(Checkpoint::capture(&four, meta()), ckpt);
        let rebuilt: WbcNet<f32> = ckpt.to_model().unwrap();
        assert_eq!(rebuilt.descriptor(), four.descriptor());
    }
}
