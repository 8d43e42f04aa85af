//! Top-k sparse autoencoder over feature vectors.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::metrics::median;
use crate::nn::{Adam, AdamConfig};
use crate::rng::{derive_seed, stream, stream_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaeConfig {
    pub hidden: usize,
    pub k_active: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl SaeConfig {
    /// Over-complete default for `d`-dimensional inputs: `4d` hidden units,
    /// `d/8` of them active.
    pub fn for_dim(d: usize, seed: u64) -> Self {
        Self { hidden: 4 * d, k_active: (d / 8).max(1), epochs: 30, batch: 64, lr: 1e-3, seed }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaeModel {
    /// `[H, D]`
    pub encoder: Array2<f64>,
    pub encoder_bias: Array1<f64>,
    /// `[D, H]`
    pub decoder: Array2<f64>,
    pub decoder_bias: Array1<f64>,
    pub k_active: usize,
}

impl SaeModel {
    pub fn hidden(&self) -> usize {
        self.encoder.nrows()
    }

    fn pre_activations(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.encoder.t()) + &self.encoder_bias
    }

    /// Codes with only the `k_active` largest pre-activations of each row kept.
    pub fn encode(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.encoder.ncols() {
            return arg_err(format!("rows have width {}, encoder expects {}", x.ncols(), self.encoder.ncols()));
        }
        let mut h = self.pre_activations(x);
        top_k_in_place(&mut h, self.k_active);
        Ok(h)
    }

    pub fn reconstruct(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.encode(x)?.dot(&self.decoder.t()) + &self.decoder_bias)
    }

    /// Mean over rows of the squared reconstruction error.
    pub fn reconstruction_error(&self, x: &Array2<f64>) -> Result<f64> {
        let r = self.reconstruct(x)?;
        Ok((&r - x).mapv(|v| v * v).sum() / x.nrows().max(1) as f64)
    }
}

/// Zeroes all but the `k` largest entries of every row (ties go to the lower
/// index).
fn top_k_in_place(h: &mut Array2<f64>, k: usize) {
    let width = h.ncols();
    let mut idx: Vec<usize> = Vec::with_capacity(width);
    for mut row in h.rows_mut() {
        if k >= width {
            continue;
        }
        idx.clear();
        idx.extend(0..width);
        idx.select_nth_unstable_by(k, |&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &i in &idx[k..] {
            row[i] = 0.0;
        }
    }
}

/// Trains on squared reconstruction error with Adam. Returns the model and the
/// median batch loss of every epoch.
pub fn sae_train(x: &Array2<f64>, config: &SaeConfig) -> Result<(SaeModel, Vec<f64>)> {
    let (m, d) = x.dim();
    let h = config.hidden;
    if config.k_active == 0 || config.k_active > h {
        return arg_err(format!("k_active {} must lie in 1..={h}", config.k_active));
    }
    if m < h {
        return arg_err(format!("{m} rows are fewer than the {h} hidden units"));
    }
    if config.batch == 0 || config.epochs == 0 {
        return arg_err("batch and epochs must be positive");
    }
    if x.iter().any(|v| !v.is_finite()) {
        return arg_err("non-finite feature");
    }
    let mut rng = stream_rng(config.seed, stream::INIT);
    let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid");
    let encoder = Array2::from_shape_simple_fn((h, d), || normal.sample(&mut rng));
    let mut model = SaeModel {
        decoder: encoder.t().to_owned(),
        encoder,
        encoder_bias: Array1::zeros(h),
        decoder_bias: x.mean_axis(Axis(0)).expect("non-empty"),
        k_active: config.k_active,
    };
    let mut opt = Adam::new(AdamConfig { lr: config.lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 });
    let mut order: Vec<usize> = (0..m).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut stream_rng(derive_seed(config.seed, epoch as u64), stream::SHUFFLE));
        let mut losses = Vec::new();
        for chunk in order.chunks(config.batch) {
            let xb = x.select(Axis(0), chunk);
            let b = chunk.len() as f64;
            let mut s = model.pre_activations(&xb);
            top_k_in_place(&mut s, model.k_active);
            let diff = s.dot(&model.decoder.t()) + &model.decoder_bias - &xb;
            losses.push(diff.mapv(|v| v * v).sum() / b);
            let dxh = diff * (2.0 / b);
            let g_dec = dxh.t().dot(&s);
            let g_dec_bias = dxh.sum_axis(Axis(0));
            let mut ds = dxh.dot(&model.decoder);
            ndarray::Zip::from(&mut ds).and(&s).for_each(|g, &v| {
                if v == 0.0 {
                    *g = 0.0;
                }
            });
            let g_enc = ds.t().dot(&xb);
            let g_enc_bias = ds.sum_axis(Axis(0));
            opt.step(
                vec![
                    model.encoder.view_mut().into_dyn(),
                    model.encoder_bias.view_mut().into_dyn(),
                    model.decoder.view_mut().into_dyn(),
                    model.decoder_bias.view_mut().into_dyn(),
                ],
                vec![
                    g_enc.view().into_dyn(),
                    g_enc_bias.view().into_dyn(),
                    g_dec.view().into_dyn(),
                    g_dec_bias.view().into_dyn(),
                ],
            );
        }
        history.push(median(losses).unwrap_or(f64::NAN));
    }
    Ok((model, history))
}

/// Activation summary of one group of rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupActivation {
    pub name: String,
    pub rows: usize,
    /// Mean code value per hidden unit; absent for an empty group.
    pub mean_activation: Option<Vec<f64>>,
    /// Units active in more than half of the rows; absent for an empty group.
    pub support: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActivationReport {
    pub groups: Vec<GroupActivation>,
    /// Pairwise Jaccard similarity of the support sets; absent when either
    /// group is empty.
    pub jaccard: Vec<Vec<Option<f64>>>,
}

impl ActivationReport {
    pub fn jaccard_between(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.groups.iter().position(|g| g.name == a)?;
        let j = self.groups.iter().position(|g| g.name == b)?;
        self.jaccard[i][j]
    }
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets counting as identical.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|x| b.contains(x)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Per-group mean activations and support sets, plus pairwise Jaccard
/// similarity of the supports.
pub fn sae_activation_report(sae: &SaeModel, groups: &[(&str, &Array2<f64>)]) -> Result<ActivationReport> {
    if groups.len() < 2 {
        return arg_err("the activation report compares at least two groups");
    }
    let mut out = Vec::with_capacity(groups.len());
    for (name, x) in groups {
        if x.nrows() == 0 {
            out.push(GroupActivation { name: name.to_string(), rows: 0, mean_activation: None, support: None });
            continue;
        }
        let codes = sae.encode(x)?;
        let rows = codes.nrows();
        let mean = codes.mean_axis(Axis(0)).expect("non-empty").to_vec();
        let support = (0..codes.ncols())
            .filter(|&u| 2 * codes.column(u).iter().filter(|&&v| v != 0.0).count() > rows)
            .collect();
        out.push(GroupActivation { name: name.to_string(), rows, mean_activation: Some(mean), support: Some(support) });
    }
    let jaccard = out
        .iter()
        .map(|a| out.iter().map(|b| Some(jaccard(a.support.as_ref()?, b.support.as_ref()?))).collect())
        .collect();
    Ok(ActivationReport { groups: out, jaccard })
}
