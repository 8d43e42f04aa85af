//! Interpretability analytics over penultimate classifier features: PCA
//! spreads and decision-boundary maps, t-SNE embeddings and sparse-autoencoder
//! activation audits.

mod pca;
mod sae;
mod tsne;

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::conditioning::argmax;
use crate::error::{arg_err, Error, Result};
use crate::nets::Classifier;

pub use pca::{pca_fit, pca_inverse, pca_transform, PcaModel};
pub use sae::{jaccard, sae_activation_report, sae_train, ActivationReport, GroupActivation, SaeConfig, SaeModel};
pub use tsne::{input_affinities, silhouette, tsne, tsne_kl, two_means, TsneConfig, TsneResult, MAX_POINTS};

/// Where a feature row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    Training,
    /// Real data held out from classifier training.
    Holdout,
    Inverted,
    Noise,
}

impl FeatureSource {
    pub fn name(self) -> &'static str {
        match self {
            FeatureSource::Training => "training",
            FeatureSource::Holdout => "holdout",
            FeatureSource::Inverted => "inverted",
            FeatureSource::Noise => "noise",
        }
    }
}

/// Feature rows tagged with their source and (when known) class label.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    /// `[M, D]`
    pub values: Array2<f32>,
    pub sources: Vec<FeatureSource>,
    pub labels: Vec<Option<usize>>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }

    /// Rows from `source`, as f64.
    pub fn rows_from(&self, source: FeatureSource) -> Array2<f64> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.sources[i] == source).collect();
        self.values.select(ndarray::Axis(0), &idx).mapv(f64::from)
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.values.ncols() != other.values.ncols() {
            return arg_err("feature widths differ");
        }
        let values = ndarray::concatenate(ndarray::Axis(0), &[self.values.view(), other.values.view()])
            .expect("matching widths");
        Ok(Self {
            values,
            sources: self.sources.iter().chain(&other.sources).copied().collect(),
            labels: self.labels.iter().chain(&other.labels).copied().collect(),
        })
    }
}

/// Penultimate features of `images` in evaluation mode.
pub fn extract_features(
    classifier: &Classifier<f32>,
    images: &Array4<f32>,
    labels: Option<&[usize]>,
    source: FeatureSource,
) -> Result<FeatureMatrix> {
    let (m, c, h, w) = images.dim();
    let cfg = &classifier.config;
    if (c, h, w) != (cfg.in_channels, cfg.image_size, cfg.image_size) {
        return arg_err(format!(
            "images are {c}x{h}x{w}, classifier expects {}x{s}x{s}",
            cfg.in_channels,
            s = cfg.image_size
        ));
    }
    if labels.is_some_and(|l| l.len() != m) {
        return arg_err("label count differs from the image count");
    }
    let values = classifier.features(images, 256)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite feature".into()));
    }
    Ok(FeatureMatrix {
        values,
        sources: vec![source; m],
        labels: labels.map_or_else(|| vec![None; m], |l| l.iter().map(|&v| Some(v)).collect()),
    })
}

/// Axis-aligned rectangle in the 2-D PCA plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Bounds {
    /// Bounding box of `points` (`[M, 2]`) widened by `padding` of its extent
    /// on every side.
    pub fn covering(points: &Array2<f64>, padding: f64) -> Result<Self> {
        if points.ncols() != 2 || points.nrows() == 0 {
            return arg_err("bounds need a non-empty [M, 2] point set");
        }
        let span = |col: usize| {
            let c = points.column(col);
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pad = ((hi - lo) * padding).max(1e-6);
            (lo - pad, hi + pad)
        };
        Ok(Self { x: span(0), y: span(1) })
    }

    /// Coordinate of grid index `i` of `r` along an axis spanning `range`.
    fn at(range: (f64, f64), i: usize, r: usize) -> f64 {
        range.0 + (range.1 - range.0) * i as f64 / (r - 1) as f64
    }
}

/// Predicted class over a `resolution × resolution` grid of the PCA plane.
/// Row `i` is the y coordinate, column `j` the x coordinate, both ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMap {
    pub classes: Array2<usize>,
    pub bounds: Bounds,
}

impl ClassMap {
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        let r = self.classes.nrows();
        (Bounds::at(self.bounds.x, j, r), Bounds::at(self.bounds.y, i, r))
    }

    /// Sorted distinct classes present in the map.
    pub fn present_classes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.classes.iter().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Classifies every grid point by mapping it back to feature space with
/// [`pca_inverse`] and running the classifier head.
pub fn decision_boundary_map(
    classifier: &Classifier<f32>,
    pca2: &PcaModel,
    bounds: Bounds,
    resolution: usize,
) -> Result<ClassMap> {
    if resolution < 2 {
        return arg_err(format!("resolution {resolution} must be at least 2"));
    }
    if pca2.k() != 2 {
        return arg_err(format!("decision maps need a 2-component PCA, got {}", pca2.k()));
    }
    if pca2.dim() != classifier.feature_dim() {
        return arg_err("PCA width differs from the classifier feature width");
    }
    let r = resolution;
    let grid = Array2::from_shape_fn((r * r, 2), |(p, axis)| {
        let (i, j) = (p / r, p % r);
        if axis == 0 {
            Bounds::at(bounds.x, j, r)
        } else {
            Bounds::at(bounds.y, i, r)
        }
    });
    let feats = pca_inverse(pca2, &grid)?.mapv(|v| v as f32);
    let mut classes = Array2::<usize>::zeros((r, r));
    for start in (0..r * r).step_by(4096) {
        let end = (start + 4096).min(r * r);
        let logits = classifier.head_forward(&feats.slice(ndarray::s![start..end, ..]).to_owned())?;
        for (k, row) in logits.rows().into_iter().enumerate() {
            let p = start + k;
            classes[[p / r, p % r]] = argmax(row.iter().map(|&v| f64::from(v)));
        }
    }
    Ok(ClassMap { classes, bounds })
}
