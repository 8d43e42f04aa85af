//! Loss terms, the gradient-norm penalty and the combined objectives.

mod objective;
mod penalty;
mod terms;

pub use objective::{
    inversion_loss, reconstruction_loss, InversionWeights, LossBreakdown, OutputGrads, ReconGrads, ReconWeights,
};
pub use penalty::{gradient_norm_penalty, GradPenaltyConfig, GradPenaltyMode, WeightGradient};
pub use terms::{
    cosine_similarity_loss, cross_entropy, kl_divergence, orthogonality_loss, pixel_loss, softmax_backward,
    variational_loss, weighted_cross_entropy, KL_CLAMP, MIN_FEATURE_NORM,
};
