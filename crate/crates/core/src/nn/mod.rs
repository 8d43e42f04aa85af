//! Minimal reverse-mode neural-network engine.
//!
//! Layers are plain structs holding their parameters. A forward pass returns
//! the output together with whatever the matching backward pass needs; the
//! backward pass maps an output gradient to an input gradient and, when given a
//! gradient accumulator, adds the parameter gradients into it. Accumulators
//! are zeroed clones of the layer or model itself, so parameters and their
//! gradients always share shapes and visiting order.

mod im2col;
pub mod layers;
pub mod optim;

use ndarray::{ArrayViewD, ArrayViewMutD};

use crate::real::Real;
use crate::rng::Rng;

pub use layers::{
    BatchNorm, BatchNormCache, BatchStats, Conv2d, ConvCache, ConvTranspose2d, ConvTransposeCache, Dropout,
    Linear, MaxPool2d, PoolCache,
};
pub use optim::{Adam, AdamConfig};

/// Forward-pass phase. Training passes draw dropout masks from the given stream
/// and normalize with batch statistics.
pub enum Phase<'a> {
    Eval,
    Train(&'a mut Rng),
}

impl Phase<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train(_))
    }
}

/// Access to trainable parameters and non-trainable buffers in a fixed order.
pub trait Module<T: Real> {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>);

    fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, T>>);

    fn visit_buffers<'a>(&'a self, _prefix: &str, _out: &mut Vec<(String, ArrayViewD<'a, T>)>) {}

    fn visit_buffers_mut<'a>(&'a mut self, _out: &mut Vec<ArrayViewMutD<'a, T>>) {}

    fn named_params(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        self.visit_params("", &mut out);
        out
    }

    fn params(&self) -> Vec<ArrayViewD<'_, T>> {
        self.named_params().into_iter().map(|(_, a)| a).collect()
    }

    fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        let mut out = Vec::new();
        self.visit_params_mut(&mut out);
        out
    }

    fn named_buffers(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = Vec::new();
        self.visit_buffers("", &mut out);
        out
    }

    fn buffers_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        let mut out = Vec::new();
        self.visit_buffers_mut(&mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// A copy with every parameter zeroed, used as a gradient accumulator.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        for mut p in z.params_mut() {
            p.fill(T::zero());
        }
        z
    }

    fn grad_norm(&self) -> T {
        self.params()
            .iter()
            .map(|p| p.iter().map(|&x| x * x).sum::<T>())
            .sum::<T>()
            .sqrt()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
