//! Individual loss terms. Each returns the batch-normalized value and the
//! gradient with respect to its array input. Accumulation runs in `f64`.

use ndarray::{Array, Array2, Array4, Dimension, Zip};

use crate::error::{arg_err, Error, Result};
use crate::real::Real;

/// Floor applied to Q before the logarithm.
pub const KL_CLAMP: f64 = 1e-12;

/// Rows with a smaller L2 norm are rejected by the feature losses.
pub const MIN_FEATURE_NORM: f64 = 1e-12;

/// Batch-mean `Σ P log(P / Q)`; gradient is with respect to `Q`.
pub fn kl_divergence<T: Real>(p: &Array2<f64>, q: &Array2<T>) -> Result<(f64, Array2<T>)> {
    if p.dim() != q.dim() {
        return arg_err(format!("P is {:?} but Q is {:?}", p.dim(), q.dim()));
    }
    if p.iter().any(|&v| v < 0.0) || q.iter().any(|&v| v < T::zero()) {
        return Err(Error::Domain("negative probability".into()));
    }
    let b = p.nrows().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Array2::<T>::zeros(q.raw_dim());
    Zip::from(&mut grad).and(p).and(q).for_each(|g, &pi, &qi| {
        if pi > 0.0 {
            let qv = qi.f64();
            let qc = qv.max(KL_CLAMP);
            total += pi * (pi / qc).ln();
            if qv > KL_CLAMP {
                *g = T::of(-pi / (qv * b));
            }
        }
    });
    Ok((total / b, grad))
}

/// Maps a gradient on softmax probabilities back to the logits.
pub fn softmax_backward<T: Real>(q: &Array2<T>, dq: &Array2<T>) -> Array2<T> {
    let mut dz = Array2::<T>::zeros(q.raw_dim());
    for ((mut dzr, qr), dqr) in dz.rows_mut().into_iter().zip(q.rows()).zip(dq.rows()) {
        let inner: f64 = qr.iter().zip(dqr.iter()).map(|(&a, &b)| a.f64() * b.f64()).sum();
        for ((o, &qi), &gi) in dzr.iter_mut().zip(qr.iter()).zip(dqr.iter()) {
            *o = T::of(qi.f64() * (gi.f64() - inner));
        }
    }
    dz
}

/// Row-wise log-softmax in `f64`.
fn log_softmax_row<T: Real>(row: ndarray::ArrayView1<T>) -> Vec<f64> {
    let m = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v.f64() - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v.f64() - lse).collect()
}

fn check_labels(n_rows: usize, n_classes: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n_rows {
        return arg_err(format!("{} labels for {n_rows} rows", labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return arg_err(format!("label {l} out of range for {n_classes} classes"));
    }
    Ok(())
}

/// Batch-mean negative log-likelihood of the labels under softmax(logits).
pub fn cross_entropy<T: Real>(logits: &Array2<T>, labels: &[usize]) -> Result<(f64, Array2<T>)> {
    weighted_cross_entropy(logits, labels, None)
}

/// Cross-entropy weighted per target class, normalized by the summed weights
/// of the batch's targets. `None` means unit weights.
pub fn weighted_cross_entropy<T: Real>(
    logits: &Array2<T>,
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<(f64, Array2<T>)> {
    let (b, n) = logits.dim();
    check_labels(b, n, labels)?;
    if let Some(w) = class_weights {
        if w.len() != n {
            return arg_err(format!("{} class weights for {n} classes", w.len()));
        }
        if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain("class weights must be finite and non-negative".into()));
        }
    }
    let weight = |y: usize| class_weights.map_or(1.0, |w| w[y]);
    let norm: f64 = labels.iter().map(|&y| weight(y)).sum();
    let mut grad = Array2::<T>::zeros((b, n));
    if b == 0 || norm == 0.0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let ls = log_softmax_row(logits.row(i));
        let w = weight(y);
        total -= w * ls[y];
        for (j, &l) in ls.iter().enumerate() {
            let target = if j == y { 1.0 } else { 0.0 };
            grad[[i, j]] = T::of(w * (l.exp() - target) / norm);
        }
    }
    Ok((total / norm, grad))
}

/// Unit rows and norms; rejects rows with a vanishing norm.
fn normalize_rows<T: Real>(f: &Array2<T>) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut u = f.mapv(|v| v.f64());
    let mut norms = Vec::with_capacity(f.nrows());
    for (i, mut row) in u.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n >= MIN_FEATURE_NORM) {
            return Err(Error::DegenerateFeature(format!("row {i} has norm {n:e}")));
        }
        row /= n;
        norms.push(n);
    }
    Ok((u, norms))
}

/// Pulls a gradient on unit rows back through the normalization.
fn normalize_backward<T: Real>(u: &Array2<f64>, norms: &[f64], du: &Array2<f64>) -> Array2<T> {
    let mut df = Array2::<T>::zeros(u.raw_dim());
    for (i, mut out) in df.rows_mut().into_iter().enumerate() {
        let ui = u.row(i);
        let gi = du.row(i);
        let proj = ui.dot(&gi);
        for ((o, &uk), &gk) in out.iter_mut().zip(ui.iter()).zip(gi.iter()) {
            *o = T::of((gk - proj * uk) / norms[i]);
        }
    }
    df
}

/// Mean cosine similarity over ordered pairs of distinct rows.
pub fn cosine_similarity_loss<T: Real>(features: &Array2<T>) -> Result<(f64, Array2<T>)> {
    let b = features.nrows();
    if b < 2 {
        return arg_err("cosine similarity needs at least two rows");
    }
    let (u, norms) = normalize_rows(features)?;
    let s = u.sum_axis(ndarray::Axis(0));
    let pairs = (b * (b - 1)) as f64;
    // Σ_{i≠j} uᵢ·uⱼ = ‖Σuᵢ‖² − Σ‖uᵢ‖²
    let value = (s.dot(&s) - b as f64) / pairs;
    let mut du = Array2::<f64>::zeros(u.raw_dim());
    for (mut row, ui) in du.rows_mut().into_iter().zip(u.rows()) {
        Zip::from(&mut row).and(&s).and(&ui).for_each(|o, &sk, &uk| *o = 2.0 * (sk - uk) / pairs);
    }
    Ok((value, normalize_backward(&u, &norms, &du)))
}

/// Mean squared deviation of the normalized Gram matrix from the identity.
pub fn orthogonality_loss<T: Real>(features: &Array2<T>) -> Result<(f64, Array2<T>)> {
    let b = features.nrows();
    if b == 0 {
        return arg_err("orthogonality loss needs at least one row");
    }
    let (u, norms) = normalize_rows(features)?;
    let mut dev = u.dot(&u.t());
    for i in 0..b {
        dev[[i, i]] -= 1.0;
    }
    let bb = (b * b) as f64;
    let value = dev.iter().map(|v| v * v).sum::<f64>() / bb;
    let du = dev.dot(&u) * (4.0 / bb);
    Ok((value, normalize_backward(&u, &norms, &du)))
}

/// Squared differences between vertically and horizontally adjacent pixels,
/// summed per image and averaged over the batch.
pub fn variational_loss<T: Real>(images: &Array4<T>) -> Result<(f64, Array4<T>)> {
    let (b, _, h, w) = images.dim();
    if h < 2 || w < 2 {
        return arg_err(format!("variational loss needs H, W >= 2, got {h}x{w}"));
    }
    let x = images.mapv(|v| v.f64());
    let mut grad = Array4::<f64>::zeros(x.raw_dim());
    let scale = 1.0 / b.max(1) as f64;
    let mut total = 0.0;
    for ((bi, ci, hi, wi), &v) in x.indexed_iter() {
        if hi + 1 < h {
            let d = x[[bi, ci, hi + 1, wi]] - v;
            total += d * d;
            grad[[bi, ci, hi + 1, wi]] += 2.0 * d * scale;
            grad[[bi, ci, hi, wi]] -= 2.0 * d * scale;
        }
        if wi + 1 < w {
            let d = x[[bi, ci, hi, wi + 1]] - v;
            total += d * d;
            grad[[bi, ci, hi, wi + 1]] += 2.0 * d * scale;
            grad[[bi, ci, hi, wi]] -= 2.0 * d * scale;
        }
    }
    Ok((total * scale, grad.mapv(T::of)))
}

/// Hinge penalty on values outside `[0, 1]`, averaged over the batch (first
/// axis). The gradient is the subgradient that is zero inside the interval.
pub fn pixel_loss<T: Real, D: Dimension>(images: &Array<T, D>) -> (f64, Array<T, D>) {
    let b = images.shape().first().copied().unwrap_or(1).max(1) as f64;
    let mut total = 0.0;
    let grad = images.mapv(|v| {
        let x = v.f64();
        if x < 0.0 {
            total -= x;
            T::of(-1.0 / b)
        } else if x > 1.0 {
            total += x - 1.0;
            T::of(1.0 / b)
        } else {
            T::zero()
        }
    });
    (total / b, grad)
}
