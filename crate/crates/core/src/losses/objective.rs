//! Combined objectives for inversion and reconstruction.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use super::penalty::{gradient_norm_penalty, GradPenaltyConfig};
use super::terms::{
    cosine_similarity_loss, cross_entropy, kl_divergence, orthogonality_loss, pixel_loss, softmax_backward,
    variational_loss,
};
use crate::error::{Error, Result};
use crate::nets::{Classifier, ClassifierOutput};
use crate::real::Real;

fn check_weight(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("weight {name} = {v} must be finite and non-negative")))
    }
}

/// α (KL), β (CE), γ (cosine), δ (orthogonality).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for InversionWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 0.1, delta: 0.1 }
    }
}

impl InversionWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma, delta };
        w.validate()?;
        Ok(w)
    }

    /// Weights without any label signal (α = β = 0). Only meant for control
    /// runs that measure chance-level behavior.
    pub fn label_free(gamma: f64, delta: f64) -> Result<Self> {
        let w = Self { alpha: 0.0, beta: 0.0, gamma, delta };
        w.validate_terms()?;
        Ok(w)
    }

    pub fn has_label_signal(&self) -> bool {
        self.alpha > 0.0 || self.beta > 0.0
    }

    fn validate_terms(&self) -> Result<()> {
        check_weight("alpha", self.alpha)?;
        check_weight("beta", self.beta)?;
        check_weight("gamma", self.gamma)?;
        check_weight("delta", self.delta)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_terms()?;
        if !self.has_label_signal() {
            return Err(Error::Config("at least one of alpha, beta must be positive".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { alpha: self.alpha * c, beta: self.beta * c, gamma: self.gamma * c, delta: self.delta * c }
    }
}

/// Weights of the reconstruction objective together with the perturbation
/// radius and the gradient-penalty estimator settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconWeights {
    pub alpha: f64,
    pub alpha_pert: f64,
    pub beta: f64,
    pub beta_pert: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eta_var: f64,
    pub eta_pix: f64,
    pub eta_grad: f64,
    /// L∞ radius of the uniform perturbation.
    pub eps_pert: f64,
    pub grad_penalty: GradPenaltyConfig,
}

impl Default for ReconWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            alpha_pert: 1.0,
            beta: 1.0,
            beta_pert: 1.0,
            gamma: 0.05,
            delta: 0.05,
            eta_var: 1e-4,
            eta_pix: 1.0,
            eta_grad: 1e-3,
            eps_pert: 0.05,
            grad_penalty: GradPenaltyConfig::default(),
        }
    }
}

impl ReconWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("alpha_pert", self.alpha_pert),
            ("beta", self.beta),
            ("beta_pert", self.beta_pert),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("eta_var", self.eta_var),
            ("eta_pix", self.eta_pix),
            ("eta_grad", self.eta_grad),
        ] {
            check_weight(name, v)?;
        }
        if !(self.eps_pert > 0.0 && self.eps_pert < 0.5) {
            return Err(Error::Config(format!("eps_pert {} not in (0, 0.5)", self.eps_pert)));
        }
        if !(self.grad_penalty.fd_step > 0.0) {
            return Err(Error::Config("grad_penalty.fd_step must be positive".into()));
        }
        if self.grad_penalty.probes == 0 {
            return Err(Error::Config("grad_penalty.probes must be positive".into()));
        }
        Ok(())
    }

    /// The clean-image part of the objective.
    pub fn inversion_part(&self) -> InversionWeights {
        InversionWeights { alpha: self.alpha, beta: self.beta, gamma: self.gamma, delta: self.delta }
    }

    /// Whether every reconstruction-only term is switched off.
    pub fn is_pure_inversion(&self) -> bool {
        [self.alpha_pert, self.beta_pert, self.eta_var, self.eta_pix, self.eta_grad].iter().all(|&w| w == 0.0)
    }
}

/// Unweighted term values and the weighted total. Terms whose weight is zero
/// are not evaluated and read 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub kl: f64,
    pub ce: f64,
    pub cosine: f64,
    pub ortho: f64,
    pub var: f64,
    pub pix: f64,
    pub grad: f64,
    pub kl_pert: f64,
    pub ce_pert: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,total,kl,ce,cosine,ortho,var,pix,grad,kl_pert,ce_pert";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{},{},{},{},{},{},{}",
            self.total,
            self.kl,
            self.ce,
            self.cosine,
            self.ortho,
            self.var,
            self.pix,
            self.grad,
            self.kl_pert,
            self.ce_pert
        )
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    fn values(&self) -> [f64; 10] {
        [
            self.total,
            self.kl,
            self.ce,
            self.cosine,
            self.ortho,
            self.var,
            self.pix,
            self.grad,
            self.kl_pert,
            self.ce_pert,
        ]
    }

    /// Elementwise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = [0.0; 10];
        for it in items {
            for (a, v) in acc.iter_mut().zip(it.values()) {
                *a += v;
            }
        }
        let [total, kl, ce, cosine, ortho, var, pix, grad, kl_pert, ce_pert] = acc.map(|v| v / n);
        LossBreakdown { total, kl, ce, cosine, ortho, var, pix, grad, kl_pert, ce_pert }
    }
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "total={} kl={} ce={} cosine={} ortho={} var={} pix={} grad={} kl_pert={} ce_pert={}",
            self.total,
            self.kl,
            self.ce,
            self.cosine,
            self.ortho,
            self.var,
            self.pix,
            self.grad,
            self.kl_pert,
            self.ce_pert
        )
    }
}

/// Gradients of an objective with respect to one classifier pass.
#[derive(Clone, Debug)]
pub struct OutputGrads<T> {
    pub logits: Array2<T>,
    pub features: Option<Array2<T>>,
}

/// Label terms (KL and CE) of one classifier pass; adds weighted gradients to
/// `d_logits`. Returns (kl, ce).
fn label_terms<T: Real>(
    alpha: f64,
    beta: f64,
    p: Option<&Array2<f64>>,
    out: &ClassifierOutput<T>,
    labels: &[usize],
    d_logits: &mut Array2<T>,
) -> Result<(f64, f64)> {
    let mut kl = 0.0;
    let mut ce = 0.0;
    if alpha > 0.0 {
        if let Some(p) = p {
            let (v, dq) = kl_divergence(p, &out.probabilities)?;
            kl = v;
            d_logits.scaled_add(T::of(alpha), &softmax_backward(&out.probabilities, &dq));
        }
    }
    if beta > 0.0 {
        let (v, dz) = cross_entropy(&out.logits, labels)?;
        ce = v;
        d_logits.scaled_add(T::of(beta), &dz);
    }
    Ok((kl, ce))
}

/// `α·KL(P‖Q) + β·CE + γ·cosine + δ·ortho`. KL is skipped when `p` is absent
/// (label and intermediate-matrix conditioning carry no distribution).
pub fn inversion_loss<T: Real>(
    weights: &InversionWeights,
    p: Option<&Array2<f64>>,
    out: &ClassifierOutput<T>,
    labels: &[usize],
) -> Result<(LossBreakdown, OutputGrads<T>)> {
    let mut b = LossBreakdown::default();
    let mut d_logits = Array2::<T>::zeros(out.logits.raw_dim());
    (b.kl, b.ce) = label_terms(weights.alpha, weights.beta, p, out, labels, &mut d_logits)?;
    let mut d_features = None;
    if weights.gamma > 0.0 {
        let (v, df) = cosine_similarity_loss(&out.features)?;
        b.cosine = v;
        d_features = Some(df * T::of(weights.gamma));
    }
    if weights.delta > 0.0 {
        let (v, df) = orthogonality_loss(&out.features)?;
        b.ortho = v;
        let df = df * T::of(weights.delta);
        d_features = Some(match d_features {
            Some(acc) => acc + df,
            None => df,
        });
    }
    b.total = weights.alpha * b.kl + weights.beta * b.ce + weights.gamma * b.cosine + weights.delta * b.ortho;
    Ok((b, OutputGrads { logits: d_logits, features: d_features }))
}

/// Gradients of the reconstruction objective.
#[derive(Clone, Debug)]
pub struct ReconGrads<T> {
    pub clean: OutputGrads<T>,
    /// Gradient on the perturbed pass's logits; `None` when α′ = β′ = 0.
    pub perturbed_logits: Option<Array2<T>>,
    /// Direct gradient on the clean images from the image priors and penalty.
    pub images: Array4<T>,
}

/// Full reconstruction objective. KL and CE are evaluated on both the clean
/// and the perturbed classifier outputs against the same condition; the image
/// priors and the gradient-norm penalty act on the clean images.
#[allow(clippy::too_many_arguments)]
pub fn reconstruction_loss<T: Real>(
    weights: &ReconWeights,
    p: Option<&Array2<f64>>,
    images: &Array4<T>,
    clean: &ClassifierOutput<T>,
    perturbed: &ClassifierOutput<T>,
    classifier: &Classifier<T>,
    labels: &[usize],
    seed: u64,
) -> Result<(LossBreakdown, ReconGrads<T>)> {
    let (mut b, clean_grads) = inversion_loss(&weights.inversion_part(), p, clean, labels)?;
    let mut d_pert = Array2::<T>::zeros(perturbed.logits.raw_dim());
    (b.kl_pert, b.ce_pert) = label_terms(weights.alpha_pert, weights.beta_pert, p, perturbed, labels, &mut d_pert)?;
    let perturbed_logits = (weights.alpha_pert > 0.0 || weights.beta_pert > 0.0).then_some(d_pert);
    let mut d_images = Array4::<T>::zeros(images.raw_dim());
    if weights.eta_var > 0.0 {
        let (v, g) = variational_loss(images)?;
        b.var = v;
        d_images.scaled_add(T::of(weights.eta_var), &g);
    }
    if weights.eta_pix > 0.0 {
        let (v, g) = pixel_loss(images);
        b.pix = v;
        d_images.scaled_add(T::of(weights.eta_pix), &g);
    }
    if weights.eta_grad > 0.0 {
        let (v, g) = gradient_norm_penalty(classifier, images, labels, &weights.grad_penalty, seed)?;
        b.grad = v;
        d_images.scaled_add(T::of(weights.eta_grad), &g);
    }
    b.total += weights.alpha_pert * b.kl_pert
        + weights.beta_pert * b.ce_pert
        + weights.eta_var * b.var
        + weights.eta_pix * b.pix
        + weights.eta_grad * b.grad;
    Ok((b, ReconGrads { clean: clean_grads, perturbed_logits, images: d_images }))
}
