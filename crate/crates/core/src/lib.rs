//! Network inversion for image classifiers.
//!
//! A conditioned generator is trained against a frozen classifier so that its
//! samples elicit chosen labels. The learned input distribution then feeds
//! interpretability reports, out-of-distribution hardening with a garbage
//! class, and reconstruction of training-like samples.

// `!(x > 0.0)` is how argument checks reject NaN along with the bad range
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditioning;
pub mod data;
pub mod losses;
pub mod error;
pub mod interpret;
pub mod inversion;
pub mod metrics;
pub mod nets;
pub mod nn;
pub mod ood;
pub mod real;
pub mod reconstruction;
pub mod render;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
