//! Penalty on the norm of the classifier's weight gradient at generated inputs.
//!
//! Probe mode estimates `‖∇_θ L‖₂` from central differences of the loss along
//! Rademacher directions in weight space, so its input gradient needs only
//! ordinary first-order backward passes at shifted weights. Exact mode uses
//! the exact weight gradient for the value; its input gradient is the central
//! difference of `∇_I L` along the unit weight-gradient direction, which equals
//! the mixed second derivative up to `O(ε²)`.

use ndarray::{Array, Array4, Dimension};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::losses::terms::cross_entropy;
use crate::nets::Classifier;
use crate::nn::Module;
use crate::real::Real;
use crate::rng::{stream, stream_rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradPenaltyMode {
    Exact,
    Probe,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradPenaltyConfig {
    pub mode: GradPenaltyMode,
    /// Number of Rademacher probes (probe mode).
    pub probes: usize,
    /// Finite-difference step in weight space.
    pub fd_step: f64,
}

impl Default for GradPenaltyConfig {
    fn default() -> Self {
        Self { mode: GradPenaltyMode::Probe, probes: 4, fd_step: 1e-3 }
    }
}

/// A loss with trainable weights whose weight gradient can be queried.
pub trait WeightGradient<T: Real>: Sized {
    type Dim: Dimension;
    type Target: ?Sized;

    /// Loss value and its gradient with respect to the input.
    fn loss_and_input_grad(
        &self,
        input: &Array<T, Self::Dim>,
        target: &Self::Target,
    ) -> Result<(f64, Array<T, Self::Dim>)>;

    /// Flattened gradient of the loss with respect to every weight.
    fn weight_grad(&self, input: &Array<T, Self::Dim>, target: &Self::Target) -> Result<Vec<f64>>;

    /// A copy with weights `θ + step · direction`.
    fn shifted(&self, direction: &[f64], step: f64) -> Self;

    fn n_weights(&self) -> usize;
}

impl<T: Real> WeightGradient<T> for Classifier<T> {
    type Dim = ndarray::Ix4;
    type Target = [usize];

    fn loss_and_input_grad(&self, input: &Array4<T>, labels: &[usize]) -> Result<(f64, Array4<T>)> {
        let (out, tape) = self.forward(input)?;
        let (value, d_logits) = cross_entropy(&out.logits, labels)?;
        Ok((value, self.backward(&tape, Some(&d_logits), None, None)))
    }

    fn weight_grad(&self, input: &Array4<T>, labels: &[usize]) -> Result<Vec<f64>> {
        let (out, tape) = self.forward(input)?;
        let (_, d_logits) = cross_entropy(&out.logits, labels)?;
        let mut g = self.zeros_like();
        self.backward(&tape, Some(&d_logits), None, Some(&mut g));
        Ok(g.params().iter().flat_map(|p| p.iter().map(|v| v.f64()).collect::<Vec<_>>()).collect())
    }

    fn shifted(&self, direction: &[f64], step: f64) -> Self {
        let mut m = self.clone();
        let mut offset = 0;
        for mut p in m.params_mut() {
            for v in p.iter_mut() {
                *v += T::of(step * direction[offset]);
                offset += 1;
            }
        }
        m
    }

    fn n_weights(&self) -> usize {
        self.param_count()
    }
}

/// Value of the penalty and its gradient with respect to the input.
pub fn gradient_norm_penalty<T: Real, M: WeightGradient<T>>(
    model: &M,
    input: &Array<T, M::Dim>,
    target: &M::Target,
    config: &GradPenaltyConfig,
    seed: u64,
) -> Result<(f64, Array<T, M::Dim>)> {
    if !(config.fd_step > 0.0) {
        return arg_err("fd_step must be positive");
    }
    let eps = config.fd_step;
    match config.mode {
        GradPenaltyMode::Probe => {
            if config.probes == 0 {
                return arg_err("probe mode needs at least one probe");
            }
            let mut rng = stream_rng(seed, stream::PROBE);
            let n = model.n_weights();
            let mut dir = vec![0.0; n];
            let mut sum_sq = 0.0;
            // Σ ĝ_k · ∂ĝ_k/∂I
            let mut acc = Array::<f64, M::Dim>::zeros(input.raw_dim());
            for _ in 0..config.probes {
                for d in dir.iter_mut() {
                    *d = if rng.random::<bool>() { 1.0 } else { -1.0 };
                }
                let (lp, gp) = model.shifted(&dir, eps).loss_and_input_grad(input, target)?;
                let (lm, gm) = model.shifted(&dir, -eps).loss_and_input_grad(input, target)?;
                let g_hat = (lp - lm) / (2.0 * eps);
                sum_sq += g_hat * g_hat;
                ndarray::Zip::from(&mut acc).and(&gp).and(&gm).for_each(|a, &p, &m| {
                    *a += g_hat * (p.f64() - m.f64()) / (2.0 * eps);
                });
            }
            let m = config.probes as f64;
            let value = (sum_sq / m).sqrt();
            let scale = if value > 0.0 { 1.0 / (m * value) } else { 0.0 };
            Ok((value, acc.mapv(|a| T::of(a * scale))))
        }
        GradPenaltyMode::Exact => {
            let g = model.weight_grad(input, target)?;
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Ok((0.0, Array::zeros(input.raw_dim())));
            }
            let unit: Vec<f64> = g.iter().map(|v| v / norm).collect();
            let (_, gp) = model.shifted(&unit, eps).loss_and_input_grad(input, target)?;
            let (_, gm) = model.shifted(&unit, -eps).loss_and_input_grad(input, target)?;
            let mut grad = gp;
            ndarray::Zip::from(&mut grad).and(&gm).for_each(|p, &m| {
                *p = T::of((p.f64() - m.f64()) / (2.0 * eps));
            });
            Ok((norm, grad))
        }
    }
}
