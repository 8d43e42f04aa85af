//! Exact t-SNE and the two-cluster statistics used on its embeddings.

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::rng::{stream, stream_rng};

/// Largest point count of the quadratic-cost variant.
pub const MAX_POINTS: usize = 10_000;
const MIN_PROB: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and the initial momentum.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TsneResult {
    pub embedding: Array2<f64>,
    /// `(iteration, KL)` every 50 iterations and after the last one.
    pub kl_history: Vec<(usize, f64)>,
}

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let norms: Array1<f64> = x.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut d = x.dot(&x.t());
    for ((i, j), v) in d.indexed_iter_mut() {
        *v = (norms[i] + norms[j] - 2.0 * *v).max(0.0);
    }
    d
}

/// Symmetrized input affinities `P` (summing to one); each row's Gaussian
/// bandwidth is binary-searched so its conditional distribution has the
/// requested perplexity.
pub fn input_affinities(x: &Array2<f64>, perplexity: f64) -> Result<Array2<f64>> {
    let m = x.nrows();
    if m > MAX_POINTS {
        return arg_err(format!("{m} points exceed the exact-variant limit of {MAX_POINTS}"));
    }
    if !(perplexity >= 1.0) || perplexity >= m as f64 / 3.0 {
        return arg_err(format!("perplexity {perplexity} is infeasible for {m} points (needs 1 <= p < M/3)"));
    }
    let d = squared_distances(x);
    let target = perplexity.ln();
    let mut p = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        let row = d.row(i);
        let min = (0..m).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let mut probs = vec![0.0; m];
        for _ in 0..100 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..m {
                probs[j] = if j == i { 0.0 } else { (-(row[j] - min) * beta).exp() };
                sum += probs[j];
                weighted += probs[j] * (row[j] - min);
            }
            // entropy of the normalized row
            let h = sum.ln() + beta * weighted / sum;
            for v in &mut probs {
                *v /= sum;
            }
            let diff = h - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        p.row_mut(i).assign(&Array1::from(probs));
    }
    let sym = (&p + &p.t()) / (2.0 * m as f64);
    Ok(sym.mapv(|v| v.max(MIN_PROB)))
}

/// Student-t kernel values `1 / (1 + ‖yᵢ − yⱼ‖²)` with a zero diagonal, and
/// their sum.
fn kernel(y: &Array2<f64>) -> (Array2<f64>, f64) {
    let mut num = squared_distances(y).mapv(|d| 1.0 / (1.0 + d));
    num.diag_mut().fill(0.0);
    let z = num.sum();
    (num, z)
}

/// `KL(P ‖ Q)` of an embedding; depends only on pairwise distances.
pub fn tsne_kl(p: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let (num, z) = kernel(y);
    let mut kl = 0.0;
    for ((i, j), &pij) in p.indexed_iter() {
        if i != j {
            let q = (num[[i, j]] / z).max(MIN_PROB);
            kl += pij * (pij / q).ln();
        }
    }
    kl
}

/// Exact t-SNE embedding into two dimensions.
pub fn tsne(x: &Array2<f64>, config: &TsneConfig) -> Result<TsneResult> {
    let p = input_affinities(x, config.perplexity)?;
    let m = x.nrows();
    let mut rng = stream_rng(config.seed, stream::INIT);
    let normal = Normal::new(0.0, 1e-2).expect("valid");
    let mut y = Array2::from_shape_simple_fn((m, 2), || normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((m, 2));
    let mut gains = Array2::<f64>::ones((m, 2));
    let mut kl_history = Vec::new();
    for it in 0..config.iterations {
        let early = it < config.exaggeration_iters;
        let ex = if early { config.early_exaggeration } else { 1.0 };
        let momentum = if early { config.initial_momentum } else { config.final_momentum };
        let (num, z) = kernel(&y);
        let mut grad = Array2::<f64>::zeros((m, 2));
        for i in 0..m {
            let (mut g0, mut g1) = (0.0, 0.0);
            for j in 0..m {
                let w = (ex * p[[i, j]] - num[[i, j]] / z) * num[[i, j]];
                g0 += w * (y[[i, 0]] - y[[j, 0]]);
                g1 += w * (y[[i, 1]] - y[[j, 1]]);
            }
            grad[[i, 0]] = 4.0 * g0;
            grad[[i, 1]] = 4.0 * g1;
        }
        ndarray::Zip::from(&mut gains).and(&grad).and(&update).for_each(|g, &dg, &u| {
            *g = if (dg > 0.0) != (u > 0.0) { *g + 0.2 } else { *g * 0.8 };
            *g = g.max(0.01);
        });
        update = &update * momentum - &(&gains * &grad) * config.learning_rate;
        y += &update;
        let mean = y.mean_axis(Axis(0)).expect("non-empty");
        y -= &mean;
        if (it + 1) % 50 == 0 || it + 1 == config.iterations {
            kl_history.push((it + 1, tsne_kl(&p, &y)));
        }
    }
    Ok(TsneResult { embedding: y, kl_history })
}

/// Deterministic 2-means: seeds are the point farthest from the centroid and
/// the point farthest from that one.
pub fn two_means(points: &Array2<f64>) -> Vec<usize> {
    let m = points.nrows();
    if m < 2 {
        return vec![0; m];
    }
    let dist = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| (&a - &b).mapv(|v| v * v).sum();
    let centroid = points.mean_axis(Axis(0)).expect("non-empty");
    let far = |from: ndarray::ArrayView1<f64>| {
        (0..m).max_by(|&a, &b| dist(points.row(a), from).total_cmp(&dist(points.row(b), from))).expect("non-empty")
    };
    let s0 = far(centroid.view());
    let s1 = far(points.row(s0));
    let mut centers = [points.row(s0).to_owned(), points.row(s1).to_owned()];
    let mut assign = vec![0; m];
    for _ in 0..100 {
        let next: Vec<usize> = points
            .rows()
            .into_iter()
            .map(|r| usize::from(dist(r, centers[1].view()) < dist(r, centers[0].view())))
            .collect();
        let changed = next != assign;
        assign = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let idx: Vec<usize> = (0..m).filter(|&i| assign[i] == c).collect();
            if !idx.is_empty() {
                *center = points.select(Axis(0), &idx).mean_axis(Axis(0)).expect("non-empty");
            }
        }
        if !changed {
            break;
        }
    }
    assign
}

/// Mean silhouette coefficient of a clustering; `None` unless at least two
/// clusters are non-empty.
pub fn silhouette(points: &Array2<f64>, assign: &[usize]) -> Option<f64> {
    let m = points.nrows();
    let k = assign.iter().copied().max().map_or(0, |v| v + 1);
    let sizes: Vec<usize> = (0..k).map(|c| assign.iter().filter(|&&a| a == c).count()).collect();
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return None;
    }
    let d = squared_distances(points).mapv(f64::sqrt);
    let mut total = 0.0;
    for i in 0..m {
        let mut sums = vec![0.0; k];
        for j in 0..m {
            sums[assign[j]] += d[[i, j]];
        }
        let own = assign[i];
        if sizes[own] < 2 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k).filter(|&c| c != own && sizes[c] > 0).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    Some(total / m as f64)
}
