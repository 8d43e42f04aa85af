//! Dataset ingestion and preparation.
//!
//! Generated and reconstructed images always live in the unit range; loaders
//! produce raw byte-valued pixels that [`normalize`] maps down.

pub mod cifar;
pub mod idx;

use std::path::{Path, PathBuf};

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::rng::{stream, stream_rng};

pub use cifar::{load_cifar10, to_cifar10_bytes};
pub use idx::{load_idx, load_idx_with_classes, save_idx, to_idx_bytes};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueRange {
    /// Byte-valued pixels in `[0, 255]`.
    Raw,
    /// Pixels in `[0, 1]`.
    Unit,
    /// Per-channel standardized values; unbounded.
    Standardized,
}

impl ValueRange {
    fn bounds(self) -> Option<(f32, f32)> {
        match self {
            ValueRange::Raw => Some((0.0, 255.0)),
            ValueRange::Unit => Some((0.0, 1.0)),
            ValueRange::Standardized => None,
        }
    }
}

/// A batch of `[batch, channels, height, width]` images with a declared range.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    pub values: Array4<f32>,
    pub range: ValueRange,
}

impl ImageBatch {
    pub fn new(values: Array4<f32>, range: ValueRange) -> Result<Self> {
        let (_, c, h, w) = values.dim();
        if c != 1 && c != 3 {
            return arg_err(format!("images need 1 or 3 channels, got {c}"));
        }
        if h != w || (h != 28 && h != 32) {
            return arg_err(format!("images must be 28x28 or 32x32, got {h}x{w}"));
        }
        if let Some((lo, hi)) = range.bounds() {
            if let Some(bad) = values.iter().find(|v| !(lo..=hi).contains(*v)) {
                return Err(Error::Domain(format!("pixel {bad} outside [{lo}, {hi}]")));
            }
        } else if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite pixel".into()));
        }
        Ok(Self { values, range })
    }

    pub fn len(&self) -> usize {
        self.values.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(channels, height, width)`
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let (_, c, h, w) = self.values.dim();
        (c, h, w)
    }
}

/// Images with integer labels in `0..n_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub images: ImageBatch,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl LabeledDataset {
    pub fn new(images: ImageBatch, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if n_classes == 0 {
            return arg_err("n_classes must be positive");
        }
        if labels.len() != images.len() {
            return Err(Error::Consistency(format!(
                "{} labels for {} images",
                labels.len(),
                images.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Consistency(format!("label {l} >= n_classes {n_classes}")));
        }
        Ok(Self { images, labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Images and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Array4<f32>, Vec<usize>) {
        let images = self.images.values.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (images, labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let (values, labels) = self.gather(indices);
        Self {
            images: ImageBatch { values, range: self.images.range },
            labels,
            n_classes: self.n_classes,
        }
    }

    /// Concatenation of two datasets with the same image shape and range.
    /// The class count is the larger of the two.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.images.image_shape() != other.images.image_shape() || self.images.range != other.images.range {
            return arg_err("cannot concatenate datasets with different shapes or ranges");
        }
        let values = ndarray::concatenate(Axis(0), &[self.images.values.view(), other.images.values.view()])
            .expect("matching shapes");
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            images: ImageBatch { values, range: self.images.range },
            labels,
            n_classes: self.n_classes.max(other.n_classes),
        })
    }

    pub fn with_n_classes(mut self, n_classes: usize) -> Result<Self> {
        if self.labels.iter().any(|&l| l >= n_classes) {
            return arg_err(format!("labels exceed {n_classes} classes"));
        }
        self.n_classes = n_classes;
        Ok(self)
    }
}

/// Per-channel mean and standard deviation, computed over a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DatasetStats {
    pub fn compute(train: &ImageBatch) -> Self {
        let (_, c, _, _) = train.values.dim();
        let mut mean = Vec::with_capacity(c);
        let mut std = Vec::with_capacity(c);
        for ci in 0..c {
            let lane = train.values.index_axis(Axis(1), ci);
            let n = lane.len().max(1) as f64;
            let m = lane.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = lane.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        Self { mean, std }
    }
}

/// Maps raw pixels to `[0, 1]` and, when `stats` is given, standardizes each
/// channel with those statistics (expressed in unit-range units).
pub fn normalize(dataset: &LabeledDataset, stats: Option<&DatasetStats>) -> Result<LabeledDataset> {
    let mut values = match dataset.images.range {
        ValueRange::Raw => dataset.images.values.mapv(|v| v / 255.0),
        ValueRange::Unit => dataset.images.values.clone(),
        ValueRange::Standardized => return arg_err("dataset is already standardized"),
    };
    let mut range = ValueRange::Unit;
    if let Some(stats) = stats {
        standardize_in_place(&mut values, stats)?;
        range = ValueRange::Standardized;
    }
    Ok(LabeledDataset {
        images: ImageBatch { values, range },
        labels: dataset.labels.clone(),
        n_classes: dataset.n_classes,
    })
}

fn standardize_in_place(values: &mut Array4<f32>, stats: &DatasetStats) -> Result<()> {
    let c = values.dim().1;
    if stats.mean.len() != c || stats.std.len() != c {
        return arg_err(format!("stats cover {} channels, images have {c}", stats.mean.len()));
    }
    if let Some(s) = stats.std.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::DegenerateStats(format!("channel std {s} is not positive")));
    }
    for ci in 0..c {
        let (m, s) = (stats.mean[ci], stats.std[ci]);
        values
            .index_axis_mut(Axis(1), ci)
            .mapv_inplace(|v| ((v as f64 - m) / s) as f32);
    }
    Ok(())
}

/// Inverse of [`normalize`]: standardized → unit (needs `stats`), unit → raw.
pub fn denormalize(dataset: &LabeledDataset, stats: Option<&DatasetStats>) -> Result<LabeledDataset> {
    let (values, range) = match dataset.images.range {
        ValueRange::Unit => (dataset.images.values.mapv(|v| v * 255.0), ValueRange::Raw),
        ValueRange::Standardized => {
            let stats = stats.ok_or_else(|| Error::Argument("standardized data needs stats".into()))?;
            let mut v = dataset.images.values.clone();
            for ci in 0..v.dim().1 {
                let (m, s) = (stats.mean[ci], stats.std[ci]);
                v.index_axis_mut(Axis(1), ci).mapv_inplace(|x| (x as f64 * s + m) as f32);
            }
            (v, ValueRange::Unit)
        }
        ValueRange::Raw => return arg_err("dataset is already raw"),
    };
    Ok(LabeledDataset {
        images: ImageBatch { values, range },
        labels: dataset.labels.clone(),
        n_classes: dataset.n_classes,
    })
}

/// Per-class quotas for a stratified draw of `n` items: every class gets an
/// equal share, classes too small to fill theirs are taken whole and the
/// remainder is spread over the others. Leftover units from uneven division go
/// to the classes listed first in `order`.
pub fn stratified_quotas(counts: &[usize], n: usize, order: &[usize]) -> Vec<usize> {
    let mut quotas = vec![0usize; counts.len()];
    let mut active: Vec<usize> = order.iter().copied().filter(|&c| counts[c] > 0).collect();
    let mut remaining = n;
    while remaining > 0 && !active.is_empty() {
        let share = remaining / active.len();
        let short: Vec<usize> = active.iter().copied().filter(|&c| counts[c] - quotas[c] <= share).collect();
        if !short.is_empty() && share > 0 {
            for &c in &short {
                remaining -= counts[c] - quotas[c];
                quotas[c] = counts[c];
            }
            active.retain(|c| !short.contains(c));
            continue;
        }
        if share > 0 {
            for &c in &active {
                quotas[c] += share;
            }
            remaining -= share * active.len();
        }
        // remaining < active.len(): one extra each, in order
        let mut next = Vec::new();
        for &c in &active {
            if remaining > 0 && quotas[c] < counts[c] {
                quotas[c] += 1;
                remaining -= 1;
            }
            if quotas[c] < counts[c] {
                next.push(c);
            }
        }
        active = next;
    }
    quotas
}

/// Class-stratified subset of `n` items, shuffled; deterministic in `seed`.
pub fn subsample(dataset: &LabeledDataset, n: usize, seed: u64) -> Result<LabeledDataset> {
    if n > dataset.len() {
        return arg_err(format!("cannot draw {n} items from {}", dataset.len()));
    }
    let mut rng = stream_rng(seed, stream::SHUFFLE);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    let mut order: Vec<usize> = (0..dataset.n_classes).collect();
    order.shuffle(&mut rng);
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let quotas = stratified_quotas(&counts, n, &order);
    let mut chosen: Vec<usize> = by_class
        .iter()
        .zip(&quotas)
        .flat_map(|(members, &q)| members[..q].iter().copied())
        .collect();
    chosen.shuffle(&mut rng);
    Ok(dataset.subset(&chosen))
}

/// `count` unit-range images drawn from N(0.5, 0.25²) and clamped, all labeled
/// with the garbage index `n_classes`.
pub fn gaussian_noise_set(
    count: usize,
    shape: (usize, usize, usize),
    n_classes: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if count == 0 {
        return arg_err("noise set needs at least one sample");
    }
    let (c, h, w) = shape;
    let mut rng = stream_rng(seed, stream::NOISE);
    let normal = Normal::new(0.5f64, 0.25).expect("valid parameters");
    let values = Array4::from_shape_simple_fn((count, c, h, w), || normal.sample(&mut rng).clamp(0.0, 1.0) as f32);
    LabeledDataset::new(ImageBatch::new(values, ValueRange::Unit)?, vec![n_classes; count], n_classes + 1)
}

/// Dataset names accepted on the command line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Cifar10,
    CustomIdx,
    CustomCifarBin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Where a dataset's files live. Custom datasets name their files explicitly
/// (relative paths resolve against the dataset root).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: DatasetName,
    #[serde(default)]
    pub train_files: Vec<PathBuf>,
    #[serde(default)]
    pub test_files: Vec<PathBuf>,
}

impl DatasetSpec {
    pub fn named(name: DatasetName) -> Self {
        Self { name, train_files: Vec::new(), test_files: Vec::new() }
    }

    pub fn files(&self, root: &Path, split: Split) -> Vec<PathBuf> {
        let idx_pair = |dir: &str| {
            let prefix = if split == Split::Train { "train" } else { "t10k" };
            vec![
                root.join(dir).join(format!("{prefix}-images-idx3-ubyte")),
                root.join(dir).join(format!("{prefix}-labels-idx1-ubyte")),
            ]
        };
        match self.name {
            DatasetName::Mnist => idx_pair("mnist"),
            DatasetName::FashionMnist => idx_pair("fashion-mnist"),
            DatasetName::Cifar10 => {
                let dir = root.join("cifar-10-batches-bin");
                match split {
                    Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
                    Split::Test => vec![dir.join("test_batch.bin")],
                }
            }
            DatasetName::CustomIdx | DatasetName::CustomCifarBin => {
                let list = if split == Split::Train { &self.train_files } else { &self.test_files };
                list.iter().map(|p| root.join(p)).collect()
            }
        }
    }

    /// Loads one split in the raw byte range.
    pub fn load(&self, root: &Path, split: Split) -> Result<LabeledDataset> {
        let files = self.files(root, split);
        match self.name {
            DatasetName::Mnist | DatasetName::FashionMnist | DatasetName::CustomIdx => {
                if files.len() != 2 {
                    return Err(Error::Config("idx datasets need exactly [images, labels] files".into()));
                }
                let n_classes = (self.name != DatasetName::CustomIdx).then_some(10);
                load_idx_with_classes(&files[0], &files[1], n_classes)
            }
            DatasetName::Cifar10 | DatasetName::CustomCifarBin => {
                if files.is_empty() {
                    return Err(Error::Config("cifar datasets need at least one batch file".into()));
                }
                load_cifar10(&files)
            }
        }
    }
}
