use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image_io::{is_image_path, load_image};
use super::transform::{resize, rotate, Rotation};
use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor;

/// Images are resized to `INPUT_SIDE x INPUT_SIDE` on load.
pub const INPUT_SIDE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::Input(format!("unknown split {other:?}"))),
        }
    }
}

/// Train / validation / test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            validation: 0.20,
            test: 0.10,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let r = SplitRatios {
            train,
            validation,
            test,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "split ratios {parts:?} must lie in [0,1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// Per-stratum counts for `n` items by largest remainder: each count is
    /// within one item of `ratio * n`, and ties favour train, then
    /// validation.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let quotas = [self.train, self.validation, self.test].map(|r| r * n as f64);
        // rounding to 1e-9 keeps representation noise (0.7*4 vs 0.2*4) out of the ranking
        let snap = |q: f64| (q * 1e9).round() / 1e9;
        let mut counts = quotas.map(|q| snap(q).floor() as usize);
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = snap(quotas[a]) - snap(quotas[a]).floor();
            let fb = snap(quotas[b]) - snap(quotas[b]).floor();
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        let mut left = n - counts.iter().sum::<usize>();
        for &k in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[k] += 1;
            left -= 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `[3, H, W]`, values in `[0, 1]`.
    pub pixels: Tensor<f32>,
    pub label: usize,
    pub source_path: PathBuf,
    pub split: Split,
}

/// One manifest line: `path,class,split`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub class: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
    class_names: Vec<String>,
    split_ratios: Option<SplitRatios>,
}

/// Inputs `[B, 3, H, W]` with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T: Real> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
}

/// `x.bmp` -> `x_r90.bmp`
pub fn rotated_path(path: &Path, rotation: Rotation) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{}.{}", rotation.suffix(), ext.to_string_lossy()),
        None => format!("{stem}{}", rotation.suffix()),
    };
    path.with_file_name(name)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

impl Dataset {
    pub fn new(class_names: Vec<String>, images: Vec<LabeledImage>) -> Result<Self> {
        if class_names.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input(format!(
                "class names must be strictly ascending: {class_names:?}"
            )));
        }
        if let Some(img) = images.iter().find(|i| i.label >= class_names.len()) {
            return Err(Error::Label {
                label: img.label,
                n_classes: class_names.len(),
            });
        }
        if let Some(img) = images.iter().find(|i| i.pixels.rank() != 3 || i.pixels.shape()[0] != 3) {
            return Err(Error::shape(format!(
                "{}: expected [3,H,W], got {:?}",
                img.source_path.display(),
                img.pixels.shape()
            )));
        }
        Ok(Dataset {
            images,
            class_names,
            split_ratios: None,
        })
    }

    /// Lists class directories and their image files under `root`, both in
    /// ascending name order.
    pub fn scan(root: &Path) -> Result<Vec<(String, Vec<PathBuf>)>> {
        let mut classes = Vec::new();
        for dir in sorted_entries(root)? {
            if !dir.is_dir() {
                continue;
            }
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let files = sorted_entries(&dir)?
                .into_iter()
                .filter(|p| p.is_file() && is_image_path(p))
                .collect();
            classes.push((name, files));
        }
        Ok(classes)
    }

    /// Loads `<root>/<CLASS>/*.{jpg,jpeg,bmp}` resized to `side x side`,
    /// decoding on up to `workers` threads (0 = default pool).
    pub fn load_dir(root: &Path, side: usize, workers: usize) -> Result<Self> {
        let classes = Self::scan(root)?;
        if classes.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no class directories under {}",
                root.display()
            )));
        }
        let names = classes.iter().map(|(n, _)| n.clone()).collect();
        let jobs: Vec<(PathBuf, usize)> = classes
            .into_iter()
            .enumerate()
            .flat_map(|(label, (_, files))| files.into_iter().map(move |f| (f, label)))
            .collect();
        let images = load_all(&jobs, side, workers, |_| Split::Unassigned)?;
        Dataset::new(names, images)
    }

    /// Loads the manifest rows accepted by `keep`, labelling them against
    /// `class_names`.
    pub fn from_manifest(
        manifest: &Path,
        class_names: &[String],
        side: usize,
        workers: usize,
        keep: impl Fn(Split) -> bool,
    ) -> Result<Self> {
        let rows = read_manifest(manifest)?;
        let mut jobs = Vec::new();
        let mut splits = Vec::new();
        for row in rows.into_iter().filter(|r| keep(r.split)) {
            let label = class_names
                .iter()
                .position(|c| *c == row.class)
                .ok_or_else(|| Error::Input(format!("manifest class {:?} not in {class_names:?}", row.class)))?;
            jobs.push((row.path, label));
            splits.push(row.split);
        }
        let images = load_all(&jobs, side, workers, |i| splits[i])?;
        Dataset::new(class_names.to_vec(), images)
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn split_ratios(&self) -> Option<SplitRatios> {
        self.split_ratios
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for img in &self.images {
            counts[img.label] += 1;
        }
        counts
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.images.len())
            .filter(|&i| self.images[i].split == split)
            .collect()
    }

    /// Each image followed by its 90, 180 and 270 degree rotations; labels
    /// and split assignments carry over to the copies.
    pub fn augment_rotations(&self) -> Result<Dataset> {
        let mut images = Vec::with_capacity(self.images.len() * 4);
        for img in &self.images {
            images.push(img.clone());
            for r in Rotation::ALL {
                images.push(LabeledImage {
                    pixels: rotate(&img.pixels, r.degrees())?,
                    label: img.label,
                    source_path: rotated_path(&img.source_path, r),
                    split: img.split,
                });
            }
        }
        Ok(Dataset {
            images,
            class_names: self.class_names.clone(),
            split_ratios: self.split_ratios,
        })
    }

    /// Stratified seeded split. Within each class the members are shuffled
    /// and cut by [`SplitRatios::counts`].
    pub fn split(&self, ratios: SplitRatios, seed: u64) -> Result<Dataset> {
        ratios.validate()?;
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, img) in self.images.iter().enumerate() {
            by_class.entry(img.label).or_default().push(i);
        }
        for (label, name) in self.class_names.iter().enumerate() {
            let n = by_class.get(&label).map_or(0, Vec::len);
            if n < 3 {
                return Err(Error::InsufficientData(format!(
                    "class {name} has {n} images; at least 3 are needed to split"
                )));
            }
        }
        let mut out = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for members in by_class.values_mut() {
            members.shuffle(&mut rng);
            let [train, val, _] = ratios.counts(members.len());
            for (k, &i) in members.iter().enumerate() {
                out.images[i].split = if k < train {
                    Split::Train
                } else if k < train + val {
                    Split::Validation
                } else {
                    Split::Test
                };
            }
        }
        out.split_ratios = Some(ratios);
        Ok(out)
    }

    /// Batches over one split, shuffled by a stream keyed on `(seed, epoch)`.
    /// The last batch may be short; an empty split yields nothing.
    pub fn batches<T: Real>(&self, split: Split, batch_size: usize, seed: u64, epoch: u64) -> Result<Batches<'_, T>> {
        if batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        let mut order = self.indices_of(split);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        Ok(Batches {
            dataset: self,
            order,
            batch_size,
            next: 0,
            _marker: std::marker::PhantomData,
        })
    }

    /// Stacks the given images into one batch.
    pub fn gather<T: Real>(&self, indices: &[usize]) -> Result<Batch<T>> {
        let first = self
            .images
            .get(*indices.first().ok_or_else(|| Error::Input("empty batch".into()))?)
            .ok_or_else(|| Error::Input("batch index out of range".into()))?;
        let shape = first.pixels.shape().to_vec();
        let mut data = Vec::with_capacity(indices.len() * first.pixels.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let img = self
                .images
                .get(i)
                .ok_or_else(|| Error::Input(format!("batch index {i} out of range")))?;
            if img.pixels.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "{}: {:?} in a batch of {shape:?}",
                    img.source_path.display(),
                    img.pixels.shape()
                )));
            }
            data.extend(img.pixels.data().iter().map(|&v| T::lit(v as f64)));
            labels.push(img.label);
        }
        let mut full = vec![indices.len()];
        full.extend(shape);
        Ok(Batch {
            inputs: Tensor::from_vec(&full, data)?,
            labels,
        })
    }

    pub fn manifest_rows(&self) -> Vec<ManifestRow> {
        self.images
            .iter()
            .map(|img| ManifestRow {
                path: img.source_path.clone(),
                class: self.class_names[img.label].clone(),
                split: img.split,
            })
            .collect()
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        write_manifest(path, &self.manifest_rows())
    }
}

fn load_all(
    jobs: &[(PathBuf, usize)],
    side: usize,
    workers: usize,
    split_of: impl Fn(usize) -> Split + Sync,
) -> Result<Vec<LabeledImage>> {
    let loaded = par::with_threads(workers, || {
        par::map_range(jobs.len(), |i| -> Result<LabeledImage> {
            let (path, label) = &jobs[i];
            let pixels = resize(&load_image(path)?, side, side)?;
            Ok(LabeledImage {
                pixels,
                label: *label,
                source_path: path.clone(),
                split: split_of(i),
            })
        })
    });
    loaded.into_iter().collect()
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["path", "class", "split"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([&r.path.to_string_lossy(), r.class.as_str(), r.split.as_str()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let csv_err = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 3 {
            return Err(Error::Input(format!(
                "{}: expected path,class,split, got {} fields",
                path.display(),
                rec.len()
            )));
        }
        rows.push(ManifestRow {
            path: PathBuf::from(&rec[0]),
            class: rec[1].to_string(),
            split: rec[2].parse()?,
        });
    }
    Ok(rows)
}

/// Iterator returned by [`Dataset::batches`].
pub struct Batches<'a, T: Real> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> Batches<'_, T> {
    /// Dataset indices in visiting order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl<T: Real> Iterator for Batches<'_, T> {
    type Item = Result<Batch<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let batch = self.dataset.gather(&self.order[self.next..end]);
        self.next = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.next).div_ceil(self.batch_size);
        (left, Some(left))
    }
}
