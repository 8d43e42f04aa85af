//! Summary statistics shared by the reports.

use ndarray::{Array2, Array4, ArrayView1, Axis};

/// Median of finite values; `None` when empty.
pub fn median(mut values: Vec<f64>) -> Option<f64> {
    values.retain(|v| v.is_finite());
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[m] } else { 0.5 * (values[m - 1] + values[m]) })
}

/// Mean cosine similarity over ordered pairs of distinct rows. With `labels`,
/// only pairs whose labels differ are counted. Rows with zero norm are skipped.
/// `None` when no pair qualifies.
pub fn mean_pairwise_cosine(features: &Array2<f32>, labels: Option<&[usize]>) -> Option<f64> {
    let rows: Vec<(usize, Vec<f64>)> = features
        .rows()
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let v: Vec<f64> = r.iter().map(|&x| f64::from(x)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            (n > 0.0).then(|| (i, v.into_iter().map(|x| x / n).collect()))
        })
        .collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, (ia, ua)) in rows.iter().enumerate() {
        for (ib, ub) in rows.iter().skip(a + 1) {
            if labels.is_some_and(|l| l[*ia] == l[*ib]) {
                continue;
            }
            sum += 2.0 * ua.iter().zip(ub).map(|(x, y)| x * y).sum::<f64>();
            count += 2;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

fn flatten(x: &Array4<f32>) -> Array2<f32> {
    let b = x.dim().0;
    let d = x.len() / b.max(1);
    x.as_standard_layout().into_owned().into_shape_with_order((b, d)).expect("contiguous")
}

fn exact_distance(a: ArrayView1<f32>, b: ArrayView1<f32>) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2)).sum::<f64>().sqrt()
}

/// Index and L2 distance of the nearest reference image for every query.
///
/// Candidates come from the expanded form `‖a‖² + ‖b‖² − 2a·b` evaluated in one
/// matrix product; the best few are rescored exactly, so an image present in
/// the reference set is at distance exactly 0.
pub fn nearest_neighbors(queries: &Array4<f32>, reference: &Array4<f32>) -> Vec<(usize, f64)> {
    const RESCORE: usize = 4;
    let q = flatten(queries);
    let r = flatten(reference);
    if r.nrows() == 0 {
        return vec![(usize::MAX, f64::INFINITY); q.nrows()];
    }
    let rn: Vec<f32> = r.rows().into_iter().map(|row| row.dot(&row)).collect();
    let mut out = Vec::with_capacity(q.nrows());
    // bounded memory: process queries in chunks
    for start in (0..q.nrows()).step_by(128) {
        let end = (start + 128).min(q.nrows());
        let qc = q.slice(ndarray::s![start..end, ..]);
        let dots = qc.dot(&r.t());
        for (qi, drow) in dots.axis_iter(Axis(0)).enumerate() {
            let mut cand: Vec<(f32, usize)> = drow.iter().zip(&rn).enumerate().map(|(j, (&d, &n))| (n - 2.0 * d, j)).collect();
            let k = RESCORE.min(cand.len());
            cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
            let best = cand[..k]
                .iter()
                .map(|&(_, j)| (j, exact_distance(qc.row(qi), r.row(j))))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .expect("non-empty");
            out.push(best);
        }
    }
    out
}

/// Normalized cross-correlation of two images (Pearson correlation of pixels).
/// `None` when either image is constant.
pub fn ncc(a: ArrayView1<f32>, b: ArrayView1<f32>) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let mb = b.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (f64::from(x) - ma, f64::from(y) - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}
