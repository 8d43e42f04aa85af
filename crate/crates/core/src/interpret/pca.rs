//! Principal component analysis by eigendecomposition of the covariance.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::error::{arg_err, Result};

/// Eigenvalues below this fraction of the largest one are treated as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `[k, D]`, orthonormal rows in decreasing-variance order.
    pub components: Array2<f64>,
    /// Share of the total variance along each component.
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.components.ncols()
    }
}

/// Fits `k` components to the rows of `x` (`[M, D]`, `M > k ≥ 1`, `k ≤ D`).
///
/// Each component's sign is fixed so its first largest-magnitude entry is positive.
/// Directions without variance are completed deterministically from the
/// canonical basis by Gram-Schmidt, so rank-deficient inputs still get a full
/// orthonormal set.
pub fn pca_fit(x: &Array2<f64>, k: usize) -> Result<PcaModel> {
    let (m, d) = x.dim();
    if k == 0 || k > d {
        return arg_err(format!("k = {k} must lie in 1..={d}"));
    }
    if m <= k {
        return arg_err(format!("{m} rows are too few for {k} components"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return arg_err("non-finite feature");
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / (m - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = eig.eigenvalues[order[0]].max(0.0);

    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(k);
    let mut ratios = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let value = eig.eigenvalues[i];
        if top > 0.0 && value > RANK_TOL * top {
            let mut v = Array1::from_iter(eig.eigenvectors.column(i).iter().copied());
            v /= v.dot(&v).sqrt();
            basis.push(fix_sign(v));
            ratios.push(value / total);
        }
    }
    // canonical completion of the zero-variance directions
    let mut e = 0;
    while basis.len() < k {
        let mut v = Array1::<f64>::zeros(d);
        v[e] = 1.0;
        e += 1;
        for b in &basis {
            let p = b.dot(&v);
            v.scaled_add(-p, b);
        }
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            basis.push(fix_sign(v / n));
            ratios.push(0.0);
        }
    }
    let mut components = Array2::zeros((k, d));
    for (mut row, b) in components.rows_mut().into_iter().zip(&basis) {
        row.assign(b);
    }
    Ok(PcaModel { mean, components, explained_variance_ratio: ratios })
}

/// Makes the first entry of (near-)maximal magnitude positive; the tolerance
/// keeps ties from flipping on rounding noise.
fn fix_sign(v: Array1<f64>) -> Array1<f64> {
    let top = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let lead = v.iter().copied().find(|x| x.abs() >= top * (1.0 - 1e-9)).unwrap_or(0.0);
    if lead < 0.0 {
        -v
    } else {
        v
    }
}

/// `(x − mean)·componentsᵀ`
pub fn pca_transform(model: &PcaModel, x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.dim() {
        return arg_err(format!("rows have width {}, model expects {}", x.ncols(), model.dim()));
    }
    Ok((x - &model.mean).dot(&model.components.t()))
}

/// `points·components + mean`
pub fn pca_inverse(model: &PcaModel, points: &Array2<f64>) -> Result<Array2<f64>> {
    if points.ncols() != model.k() {
        return arg_err(format!("points have width {}, model has {} components", points.ncols(), model.k()));
    }
    Ok(points.dot(&model.components) + &model.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array};

    fn orthonormal(c: &Array2<f64>) -> bool {
        let g = c.dot(&c.t());
        g.indexed_iter().all(|((i, j), &v)| (v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9)
    }

    #[test]
    fn points_on_a_line_have_one_component() {
        let x = Array::from_shape_fn((10, 3), |(i, j)| i as f64 * [1.0, 2.0, -2.0][j] + 0.5);
        let m = pca_fit(&x, 1).unwrap();
        assert!((m.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
        // sign fixed by the first largest-magnitude entry
        for (a, b) in m.components.row(0).iter().zip([1.0 / 3.0, 2.0 / 3.0, -2.0 / 3.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_directions_are_completed() {
        let x = Array::from_shape_fn((6, 4), |(i, j)| if j == 0 { i as f64 } else { 0.0 });
        let m = pca_fit(&x, 4).unwrap();
        assert!(orthonormal(&m.components));
        assert_eq!(&m.explained_variance_ratio[1..], &[0.0; 3]);
        assert_eq!(m, pca_fit(&x, 4).unwrap());
    }

    #[test]
    fn reconstruction_error_shrinks_with_k() {
        let x = Array::from_shape_fn((30, 5), |(i, j)| ((i * 7 + j * 13) % 11) as f64 + (i * j) as f64 * 0.1);
        let mut last = f64::INFINITY;
        for k in 1..=5 {
            let m = pca_fit(&x, k).unwrap();
            assert!(orthonormal(&m.components));
            assert!(m.explained_variance_ratio.windows(2).all(|w| w[0] >= w[1]));
            let back = pca_inverse(&m, &pca_transform(&m, &x).unwrap()).unwrap();
            let err = (&back - &x).mapv(|v| v * v).sum();
            assert!(err <= last + 1e-9);
            last = err;
        }
        assert!(last < 1e-18 * x.len() as f64 + 1e-12);
    }

    #[test]
    fn argument_errors() {
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 7.0]]);
        assert!(pca_fit(&x, 0).is_err());
        assert!(pca_fit(&x, 3).is_err());
        assert!(pca_fit(&x.slice(ndarray::s![..2, ..]).to_owned(), 2).is_err());
        let m = pca_fit(&x, 1).unwrap();
        assert!(pca_transform(&m, &arr2(&[[1.0]])).is_err());
        assert!(pca_inverse(&m, &arr2(&[[1.0, 2.0]])).is_err());
    }
}
