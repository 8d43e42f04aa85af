//! Scalar-loop oracles and random fixtures shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array2, Array4};
use netinv::losses::{
    cosine_similarity_loss, cross_entropy, gradient_norm_penalty, kl_divergence, orthogonality_loss, pixel_loss,
    variational_loss, weighted_cross_entropy, GradPenaltyConfig, GradPenaltyMode, WeightGradient,
};
use netinv::nets::{Classifier, ClassifierConfig, ConvBlockSpec};
use netinv::rng::{stream, stream_rng, Rng};
use netinv::Result;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `|a - b|` relative to the oracle; values below `1e-8` are compared absolutely.
pub fn rel_err(actual: f64, oracle: f64) -> f64 {
    (actual - oracle).abs() / oracle.abs().max(1e-8)
}

// ---------------------------------------------------------------- oracles

pub fn oracle_kl(p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            if p[[i, j]] > 0.0 {
                total += p[[i, j]] * (p[[i, j]] / q[[i, j]].max(1e-12)).ln();
            }
        }
    }
    total / p.nrows() as f64
}

fn oracle_log_prob(logits: &Array2<f64>, i: usize, y: usize) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for j in 0..logits.ncols() {
        m = m.max(logits[[i, j]]);
    }
    let mut s = 0.0;
    for j in 0..logits.ncols() {
        s += (logits[[i, j]] - m).exp();
    }
    logits[[i, y]] - m - s.ln()
}

pub fn oracle_ce(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total -= oracle_log_prob(logits, i, y);
    }
    total / labels.len() as f64
}

pub fn oracle_weighted_ce(logits: &Array2<f64>, labels: &[usize], w: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut norm = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total -= w[y] * oracle_log_prob(logits, i, y);
        norm += w[y];
    }
    total / norm
}

fn oracle_cos(f: &Array2<f64>, i: usize, j: usize) -> f64 {
    let (mut dot, mut ni, mut nj) = (0.0, 0.0, 0.0);
    for k in 0..f.ncols() {
        dot += f[[i, k]] * f[[j, k]];
        ni += f[[i, k]] * f[[i, k]];
        nj += f[[j, k]] * f[[j, k]];
    }
    dot / (ni.sqrt() * nj.sqrt())
}

pub fn oracle_cosine(f: &Array2<f64>) -> f64 {
    let b = f.nrows();
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i != j {
                total += oracle_cos(f, i, j);
            }
        }
    }
    total / (b * (b - 1)) as f64
}

pub fn oracle_ortho(f: &Array2<f64>) -> f64 {
    let b = f.nrows();
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..b {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = oracle_cos(f, i, j) - target;
            total += d * d;
        }
    }
    total / (b * b) as f64
}

pub fn oracle_var(x: &Array4<f64>) -> f64 {
    let (b, c, h, w) = x.dim();
    let mut total = 0.0;
    for bi in 0..b {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    if hi + 1 < h {
                        let d = x[[bi, ci, hi + 1, wi]] - x[[bi, ci, hi, wi]];
                        total += d * d;
                    }
                    if wi + 1 < w {
                        let d = x[[bi, ci, hi, wi + 1]] - x[[bi, ci, hi, wi]];
                        total += d * d;
                    }
                }
            }
        }
    }
    total / b as f64
}

pub fn oracle_pix(x: &Array4<f64>) -> f64 {
    let mut total = 0.0;
    for &v in x.iter() {
        if v < 0.0 {
            total += -v;
        } else if v > 1.0 {
            total += v - 1.0;
        }
    }
    total / x.dim().0 as f64
}

// ------------------------------------------------------ linear softmax model

/// Multinomial logistic regression on flattened images, written out with
/// explicit loops so it can stand in as a model for the gradient penalty.
#[derive(Clone, Debug)]
pub struct LinearSoftmax {
    /// `[classes][inputs]`
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl LinearSoftmax {
    pub fn random(classes: usize, inputs: usize, rng: &mut Rng) -> Self {
        let w = (0..classes).map(|_| (0..inputs).map(|_| 0.5 * normal(rng)).collect()).collect();
        let b = (0..classes).map(|_| 0.1 * normal(rng)).collect();
        Self { w, b }
    }

    fn logits(&self, x: &Array4<f64>) -> Array2<f64> {
        let batch = x.dim().0;
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().unwrap();
        let d = xs.len() / batch;
        let mut out = Array2::zeros((batch, self.b.len()));
        for i in 0..batch {
            for k in 0..self.b.len() {
                let mut z = self.b[k];
                for j in 0..d {
                    z += self.w[k][j] * xs[i * d + j];
                }
                out[[i, k]] = z;
            }
        }
        out
    }

    /// Softmax minus one-hot, divided by the batch size.
    fn residual(&self, x: &Array4<f64>, labels: &[usize]) -> Array2<f64> {
        let logits = self.logits(x);
        let batch = labels.len() as f64;
        let mut r = Array2::zeros(logits.raw_dim());
        for (i, &y) in labels.iter().enumerate() {
            for k in 0..logits.ncols() {
                let p = oracle_log_prob(&logits, i, k).exp();
                r[[i, k]] = (p - if k == y { 1.0 } else { 0.0 }) / batch;
            }
        }
        r
    }

    pub fn loss(&self, x: &Array4<f64>, labels: &[usize]) -> f64 {
        oracle_ce(&self.logits(x), labels)
    }

    pub fn flat_weights(&self) -> Vec<f64> {
        self.w.iter().flatten().chain(self.b.iter()).copied().collect()
    }
}

impl WeightGradient<f64> for LinearSoftmax {
    type Dim = ndarray::Ix4;
    type Target = [usize];

    fn loss_and_input_grad(&self, x: &Array4<f64>, labels: &[usize]) -> Result<(f64, Array4<f64>)> {
        let r = self.residual(x, labels);
        let mut g = Array4::zeros(x.raw_dim());
        let d = x.len() / labels.len();
        let gs = g.as_slice_mut().unwrap();
        for i in 0..labels.len() {
            for k in 0..self.b.len() {
                for j in 0..d {
                    gs[i * d + j] += r[[i, k]] * self.w[k][j];
                }
            }
        }
        Ok((self.loss(x, labels), g))
    }

    fn weight_grad(&self, x: &Array4<f64>, labels: &[usize]) -> Result<Vec<f64>> {
        let r = self.residual(x, labels);
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().unwrap();
        let d = xs.len() / labels.len();
        let mut gw = vec![vec![0.0; d]; self.b.len()];
        let mut gb = vec![0.0; self.b.len()];
        for i in 0..labels.len() {
            for k in 0..self.b.len() {
                gb[k] += r[[i, k]];
                for j in 0..d {
                    gw[k][j] += r[[i, k]] * xs[i * d + j];
                }
            }
        }
        Ok(gw.into_iter().flatten().chain(gb).collect())
    }

    fn shifted(&self, direction: &[f64], step: f64) -> Self {
        let d = self.w[0].len();
        let mut m = self.clone();
        for k in 0..m.b.len() {
            for j in 0..d {
                m.w[k][j] += step * direction[k * d + j];
            }
        }
        let base = m.b.len() * d;
        for k in 0..m.b.len() {
            m.b[k] += step * direction[base + k];
        }
        m
    }

    fn n_weights(&self) -> usize {
        self.b.len() * (self.w[0].len() + 1)
    }
}

/// Norm of the weight gradient, obtained by central differences of the loss
/// over every weight.
pub fn oracle_grad_norm_exact(model: &LinearSoftmax, x: &Array4<f64>, labels: &[usize]) -> f64 {
    let n = model.n_weights();
    let h = 1e-5;
    let mut sum = 0.0;
    for e in 0..n {
        let mut dir = vec![0.0; n];
        dir[e] = 1.0;
        let g = (model.shifted(&dir, h).loss(x, labels) - model.shifted(&dir, -h).loss(x, labels)) / (2.0 * h);
        sum += g * g;
    }
    sum.sqrt()
}

/// The Rademacher-probe estimate, drawing the same probes as the library.
pub fn oracle_grad_norm_probe(model: &LinearSoftmax, x: &Array4<f64>, labels: &[usize], cfg: &GradPenaltyConfig, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, stream::PROBE);
    let n = model.n_weights();
    let mut sum = 0.0;
    for _ in 0..cfg.probes {
        let dir: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let eps = cfg.fd_step;
        let g = (model.shifted(&dir, eps).loss(x, labels) - model.shifted(&dir, -eps).loss(x, labels)) / (2.0 * eps);
        sum += g * g;
    }
    (sum / cfg.probes as f64).sqrt()
}

// ---------------------------------------------------------------- fixtures

/// One random small fixture with inputs for every loss term.
#[derive(Clone, Debug)]
pub struct LossFixture {
    pub p: Array2<f64>,
    pub q: Array2<f64>,
    pub logits: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_weights: Vec<f64>,
    pub features: Array2<f64>,
    /// Values in `[-0.5, 1.5]`, kept at least `1e-3` away from 0 and 1.
    pub images: Array4<f64>,
    pub seed: u64,
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

pub fn loss_fixture(seed: u64) -> LossFixture {
    let mut rng = stream_rng(seed, 0);
    let b = rng.random_range(2..=8);
    let n = rng.random_range(2..=10);
    let d = rng.random_range(2..=16);
    let (c, h, w) = (rng.random_range(1..=3), rng.random_range(2..=8), rng.random_range(2..=8));
    let mut p = softmax_rows(&Array2::from_shape_fn((b, n), |_| 2.0 * normal(&mut rng)));
    // some exact zeros in P
    for i in 0..b {
        if rng.random_bool(0.3) {
            let j = rng.random_range(0..n);
            let z = p[[i, j]];
            p[[i, j]] = 0.0;
            p[[i, (j + 1) % n]] += z;
        }
    }
    let logits = Array2::from_shape_fn((b, n), |_| 3.0 * normal(&mut rng));
    let q = softmax_rows(&Array2::from_shape_fn((b, n), |_| 2.0 * normal(&mut rng)));
    let labels = (0..b).map(|_| rng.random_range(0..n)).collect();
    let class_weights = (0..n).map(|_| rng.random_range(0.1..5.0)).collect();
    let features = Array2::from_shape_fn((b, d), |_| normal(&mut rng));
    let images = Array4::from_shape_fn((b, c, h, w), |_| {
        let v: f64 = rng.random_range(-0.5..1.5);
        if v.abs() < 1e-3 || (v - 1.0).abs() < 1e-3 {
            v + 3e-3
        } else {
            v
        }
    });
    LossFixture { p, q, logits, labels, class_weights, features, images, seed }
}

/// Small images and labels plus a linear model for the gradient penalty.
pub fn penalty_fixture(seed: u64) -> (LinearSoftmax, Array4<f64>, Vec<usize>) {
    let mut rng = stream_rng(seed, 1);
    let b = rng.random_range(1..=8);
    let n = rng.random_range(2..=5);
    let (h, w) = (rng.random_range(2..=8), rng.random_range(2..=8));
    let x = Array4::from_shape_fn((b, 1, h, w), |_| rng.random_range(0.0..1.0));
    let labels = (0..b).map(|_| rng.random_range(0..n)).collect();
    (LinearSoftmax::random(n, h * w, &mut rng), x, labels)
}

/// A small frozen classifier on 8x8 single-channel inputs.
pub fn tiny_classifier(seed: u64) -> Classifier<f64> {
    let cfg = ClassifierConfig {
        in_channels: 1,
        image_size: 8,
        conv_blocks: vec![ConvBlockSpec { out_channels: 3, kernel: 3, stride: 2 }],
        leaky_slope: 0.01,
        dropout_rate: 0.0,
        feature_dim: 6,
        n_classes: 3,
    };
    Classifier::new(cfg, seed).unwrap()
}

/// Same shape as [`tiny_classifier`] but with identity activations and no
/// pooling, so the network is smooth in its input.
pub fn smooth_classifier(seed: u64) -> Classifier<f64> {
    let mut c = tiny_classifier(seed).config;
    c.leaky_slope = 1.0;
    c.conv_blocks[0].stride = 1;
    Classifier::new(c, seed).unwrap()
}

// ------------------------------------------------------------ suite drivers

/// Largest relative error of each loss against its oracle on one fixture.
pub fn oracle_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let fx = loss_fixture(seed);
    let mut out = vec![
        ("kl", rel_err(kl_divergence(&fx.p, &fx.q).unwrap().0, oracle_kl(&fx.p, &fx.q))),
        ("ce", rel_err(cross_entropy(&fx.logits, &fx.labels).unwrap().0, oracle_ce(&fx.logits, &fx.labels))),
        (
            "weighted_ce",
            rel_err(
                weighted_cross_entropy(&fx.logits, &fx.labels, Some(&fx.class_weights)).unwrap().0,
                oracle_weighted_ce(&fx.logits, &fx.labels, &fx.class_weights),
            ),
        ),
        ("cosine", rel_err(cosine_similarity_loss(&fx.features).unwrap().0, oracle_cosine(&fx.features))),
        ("ortho", rel_err(orthogonality_loss(&fx.features).unwrap().0, oracle_ortho(&fx.features))),
        ("var", rel_err(variational_loss(&fx.images).unwrap().0, oracle_var(&fx.images))),
        ("pix", rel_err(pixel_loss(&fx.images).0, oracle_pix(&fx.images))),
    ];
    let (model, x, labels) = penalty_fixture(seed);
    let exact = GradPenaltyConfig { mode: GradPenaltyMode::Exact, ..Default::default() };
    let probe = GradPenaltyConfig::default();
    let e = gradient_norm_penalty(&model, &x, &labels[..], &exact, seed).unwrap().0;
    let p = gradient_norm_penalty(&model, &x, &labels[..], &probe, seed).unwrap().0;
    let err = rel_err(e, oracle_grad_norm_exact(&model, &x, &labels))
        .max(rel_err(p, oracle_grad_norm_probe(&model, &x, &labels, &probe, seed)));
    out.push(("grad_norm", err));
    out
}

/// Central-difference check of an analytic gradient on `samples` random
/// coordinates. Returns the worst relative error; coordinates where both
/// derivatives are below `1e-8` count as agreeing.
pub fn fd_check<F>(x: &[f64], analytic: &[f64], f: F, samples: usize, rng: &mut Rng) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let i = rng.random_range(0..x.len());
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let num = (f(&xp) - f(&xm)) / (2.0 * h);
        let ana = analytic[i];
        let scale = num.abs().max(ana.abs());
        if scale > 1e-8 {
            worst = worst.max((num - ana).abs() / scale);
        }
    }
    worst
}

fn arr2_from(shape: (usize, usize), v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec(shape, v.to_vec()).unwrap()
}

fn arr4_from(shape: (usize, usize, usize, usize), v: &[f64]) -> Array4<f64> {
    Array4::from_shape_vec(shape, v.to_vec()).unwrap()
}

/// Worst finite-difference disagreement of each differentiable loss on one
/// fixture, eight coordinates per loss.
pub fn gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let fx = loss_fixture(seed);
    let mut rng = stream_rng(seed, 2);
    let s = 8;
    let mut out = Vec::new();

    // KL with respect to Q; small Q would make the central difference itself
    // inaccurate (third derivative ~ 1/q³)
    let q = fx.q.mapv(|v| v.max(0.05));
    let (_, g) = kl_divergence(&fx.p, &q).unwrap();
    let shape = q.dim();
    let err = fd_check(q.as_slice().unwrap(), g.as_slice().unwrap(), |v| kl_divergence(&fx.p, &arr2_from(shape, v)).unwrap().0, s, &mut rng);
    out.push(("kl", err));

    let shape = fx.logits.dim();
    let (_, g) = cross_entropy(&fx.logits, &fx.labels).unwrap();
    let err = fd_check(fx.logits.as_slice().unwrap(), g.as_slice().unwrap(), |v| cross_entropy(&arr2_from(shape, v), &fx.labels).unwrap().0, s, &mut rng);
    out.push(("ce", err));

    let shape = fx.features.dim();
    let (_, g) = cosine_similarity_loss(&fx.features).unwrap();
    let err = fd_check(fx.features.as_slice().unwrap(), g.as_slice().unwrap(), |v| cosine_similarity_loss(&arr2_from(shape, v)).unwrap().0, s, &mut rng);
    out.push(("cosine", err));

    let (_, g) = orthogonality_loss(&fx.features).unwrap();
    let err = fd_check(fx.features.as_slice().unwrap(), g.as_slice().unwrap(), |v| orthogonality_loss(&arr2_from(shape, v)).unwrap().0, s, &mut rng);
    out.push(("ortho", err));

    let shape = fx.images.dim();
    let (_, g) = variational_loss(&fx.images).unwrap();
    let err = fd_check(fx.images.as_slice().unwrap(), g.as_slice().unwrap(), |v| variational_loss(&arr4_from(shape, v)).unwrap().0, s, &mut rng);
    out.push(("var", err));

    let (_, g) = pixel_loss(&fx.images);
    let err = fd_check(fx.images.as_slice().unwrap(), g.as_slice().unwrap(), |v| pixel_loss(&arr4_from(shape, v)).0, s, &mut rng);
    out.push(("pix", err));

    // Probe-mode gradient penalty. Its input gradient differences two models
    // 2·ε_fd apart in weight space, so any activation kink within the 1e-4
    // input step is amplified by 1/(2·ε_fd); the check therefore uses models
    // that are smooth in the input: a real classifier with identity
    // activations and no pooling, and the linear softmax model.
    let cfg = GradPenaltyConfig::default();
    let model = smooth_classifier(seed);
    let mut img_rng = stream_rng(seed, 3);
    let b = img_rng.random_range(1..=4);
    let x = Array4::from_shape_fn((b, 1, 8, 8), |_| img_rng.random_range(0.0..1.0));
    let labels: Vec<usize> = (0..b).map(|i| i % 3).collect();
    let (_, g) = gradient_norm_penalty(&model, &x, &labels[..], &cfg, seed).unwrap();
    let shape = x.dim();
    let err = fd_check(
        x.as_slice().unwrap(),
        g.as_slice().unwrap(),
        |v| gradient_norm_penalty(&model, &arr4_from(shape, v), &labels[..], &cfg, seed).unwrap().0,
        s,
        &mut rng,
    );
    out.push(("grad_norm_probe", err));

    let (model, x, labels) = penalty_fixture(seed);
    let (_, g) = gradient_norm_penalty(&model, &x, &labels[..], &cfg, seed).unwrap();
    let shape = x.dim();
    let err = fd_check(
        x.as_slice().unwrap(),
        g.as_slice().unwrap(),
        |v| gradient_norm_penalty(&model, &arr4_from(shape, v), &labels[..], &cfg, seed).unwrap().0,
        s,
        &mut rng,
    );
    out.push(("grad_norm_probe_linear", err));
    out
}
