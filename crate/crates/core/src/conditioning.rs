//! Conditioning payloads that tell the generator which class to produce
//! without handing it the label directly.
//!
//! * `Label`: the label itself, looked up in a learned embedding.
//! * `Vector`: a softmax of standard-normal draws; its argmax is the label.
//! * `IntermediateMatrix`: an N×N binary matrix whose row k and column k are
//!   ones; injected once the generator reaches N×N resolution.
//! * `VectorMatrix`: both, sharing one label.

use ndarray::{Array2, Array3};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::rng::{stream, stream_rng, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditioningMode {
    Label,
    Vector,
    IntermediateMatrix,
    VectorMatrix,
}

impl ConditioningMode {
    pub fn uses_vector(self) -> bool {
        matches!(self, Self::Vector | Self::VectorMatrix)
    }

    pub fn uses_matrix(self) -> bool {
        matches!(self, Self::IntermediateMatrix | Self::VectorMatrix)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub mode: ConditioningMode,
    pub n_classes: usize,
    /// `[B, N]`, rows on the simplex. Present in vector modes.
    pub soft_vector: Option<Array2<f64>>,
    /// `[B, N, N]` hot matrices. Present in matrix modes.
    pub hot_matrix: Option<Array3<u8>>,
    pub labels: Vec<usize>,
}

impl Condition {
    pub fn batch(&self) -> usize {
        self.labels.len()
    }

    /// Label recovered from the payload alone: vector argmax, else the matrix
    /// index, else the explicit label.
    pub fn decoded_labels(&self) -> Vec<usize> {
        if let Some(p) = &self.soft_vector {
            return p.rows().into_iter().map(|r| argmax(r.iter().copied())).collect();
        }
        if let Some(m) = &self.hot_matrix {
            return m.outer_iter().map(|mat| matrix_index(&mat.to_owned())).collect();
        }
        self.labels.clone()
    }

    /// Checks the payload invariants for the mode.
    pub fn validate(&self) -> Result<()> {
        let b = self.labels.len();
        let n = self.n_classes;
        if let Some(&l) = self.labels.iter().find(|&&l| l >= n) {
            return arg_err(format!("label {l} >= n_classes {n}"));
        }
        match (self.mode.uses_vector(), &self.soft_vector) {
            (true, None) => return Err(Error::Consistency("vector mode without soft vectors".into())),
            (false, Some(_)) => return Err(Error::Consistency("soft vectors in a non-vector mode".into())),
            (true, Some(p)) => {
                if p.dim() != (b, n) {
                    return Err(Error::Consistency(format!("soft vectors {:?}, expected ({b}, {n})", p.dim())));
                }
                for (i, row) in p.rows().into_iter().enumerate() {
                    let s: f64 = row.sum();
                    if (s - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < 0.0) {
                        return Err(Error::Consistency(format!("row {i} is not on the simplex")));
                    }
                    if argmax(row.iter().copied()) != self.labels[i] {
                        return Err(Error::Consistency(format!("row {i}: vector argmax disagrees with label")));
                    }
                }
            }
            (false, None) => {}
        }
        match (self.mode.uses_matrix(), &self.hot_matrix) {
            (true, None) => return Err(Error::Consistency("matrix mode without hot matrices".into())),
            (false, Some(_)) => return Err(Error::Consistency("hot matrices in a non-matrix mode".into())),
            (true, Some(m)) => {
                if m.dim() != (b, n, n) {
                    return Err(Error::Consistency(format!("hot matrices {:?}, expected ({b}, {n}, {n})", m.dim())));
                }
                for (i, mat) in m.outer_iter().enumerate() {
                    let k = self.labels[i];
                    let ok = mat
                        .indexed_iter()
                        .all(|((r, c), &v)| v == u8::from(r == k || c == k));
                    if !ok {
                        return Err(Error::Consistency(format!(
                            "row {i}: hot matrix does not encode label {k}"
                        )));
                    }
                }
            }
            (false, None) => {}
        }
        Ok(())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn matrix_index(m: &Array2<u8>) -> usize {
    // the encoded index is the only full row
    m.rows()
        .into_iter()
        .position(|r| r.iter().all(|&v| v == 1))
        .unwrap_or(0)
}

fn softmax_row(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

fn soft_vectors_from(rng: &mut Rng, n_classes: usize, batch: usize) -> (Array2<f64>, Vec<usize>) {
    let mut p = Array2::<f64>::zeros((batch, n_classes));
    let mut labels = Vec::with_capacity(batch);
    for mut row in p.rows_mut() {
        let z = row.as_slice_mut().expect("row-major");
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        softmax_row(z);
        labels.push(argmax(z.iter().copied()));
    }
    (p, labels)
}

/// Softmaxed standard-normal vectors; labels are the row argmax.
pub fn sample_soft_vectors(n_classes: usize, batch: usize, seed: u64) -> Result<Condition> {
    if n_classes < 2 {
        return arg_err("soft vectors need at least two classes");
    }
    let mut rng = stream_rng(seed, stream::CONDITION);
    let (p, labels) = soft_vectors_from(&mut rng, n_classes, batch);
    Ok(Condition {
        mode: ConditioningMode::Vector,
        n_classes,
        soft_vector: Some(p),
        hot_matrix: None,
        labels,
    })
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= n_classes) {
        Some(l) => arg_err(format!("label {l} out of range for {n_classes} classes")),
        None => Ok(()),
    }
}

fn hot_vectors(labels: &[usize], n_classes: usize) -> Array2<f64> {
    let mut p = Array2::zeros((labels.len(), n_classes));
    for (i, &l) in labels.iter().enumerate() {
        p[[i, l]] = 1.0;
    }
    p
}

fn hot_matrices(labels: &[usize], n_classes: usize) -> Array3<u8> {
    Array3::from_shape_fn((labels.len(), n_classes, n_classes), |(b, r, c)| {
        u8::from(r == labels[b] || c == labels[b])
    })
}

/// One-hot conditioning vectors.
pub fn make_hot_vectors(labels: &[usize], n_classes: usize) -> Result<Condition> {
    check_labels(labels, n_classes)?;
    Ok(Condition {
        mode: ConditioningMode::Vector,
        n_classes,
        soft_vector: Some(hot_vectors(labels, n_classes)),
        hot_matrix: None,
        labels: labels.to_vec(),
    })
}

/// Hot conditioning matrices: row k and column k set to one.
pub fn make_hot_matrix(labels: &[usize], n_classes: usize) -> Result<Condition> {
    check_labels(labels, n_classes)?;
    Ok(Condition {
        mode: ConditioningMode::IntermediateMatrix,
        n_classes,
        soft_vector: None,
        hot_matrix: Some(hot_matrices(labels, n_classes)),
        labels: labels.to_vec(),
    })
}

/// What determines the labels of a constructed condition.
pub enum LabelSource<'a> {
    /// Soft vectors (vector modes) or uniform labels, drawn from the stream.
    Sampled(&'a mut Rng),
    /// Fixed labels with one-hot vectors, as used for reconstruction.
    Hot(&'a [usize]),
    /// Fixed labels with soft vectors drawn from the stream and permuted so
    /// that each row's argmax lands on its label.
    SoftFor(&'a [usize], &'a mut Rng),
}

pub fn make_condition(
    mode: ConditioningMode,
    source: LabelSource<'_>,
    n_classes: usize,
    batch: usize,
) -> Result<Condition> {
    if n_classes < 2 {
        return arg_err("conditioning needs at least two classes");
    }
    let (soft, labels) = match source {
        LabelSource::Sampled(rng) => {
            if mode.uses_vector() {
                let (p, labels) = soft_vectors_from(rng, n_classes, batch);
                (Some(p), labels)
            } else {
                (None, (0..batch).map(|_| rng.random_range(0..n_classes)).collect())
            }
        }
        LabelSource::Hot(labels) => {
            check_labels(labels, n_classes)?;
            if labels.len() != batch {
                return arg_err(format!("{} labels for batch {batch}", labels.len()));
            }
            (mode.uses_vector().then(|| hot_vectors(labels, n_classes)), labels.to_vec())
        }
        LabelSource::SoftFor(labels, rng) => {
            check_labels(labels, n_classes)?;
            if labels.len() != batch {
                return arg_err(format!("{} labels for batch {batch}", labels.len()));
            }
            let soft = mode.uses_vector().then(|| {
                let (mut p, drawn) = soft_vectors_from(rng, n_classes, batch);
                for (i, (&want, &got)) in labels.iter().zip(&drawn).enumerate() {
                    p.swap([i, want], [i, got]);
                }
                p
            });
            (soft, labels.to_vec())
        }
    };
    let condition = Condition {
        mode,
        n_classes,
        soft_vector: soft,
        hot_matrix: mode.uses_matrix().then(|| hot_matrices(&labels, n_classes)),
        labels,
    };
    debug_assert!(condition.validate().is_ok());
    Ok(condition)
}
