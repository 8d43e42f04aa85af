//! Classifier and conditioned generator.

mod checkpoint;
mod classifier;
mod generator;

use sha2::{Digest, Sha256};

use crate::nn::Module;
use crate::real::Real;

pub use checkpoint::{Checkpoint, CheckpointKind, MAGIC, VERSION};
pub use classifier::{softmax, Classifier, ClassifierConfig, ClassifierOutput, ClassifierTape, ConvBlockSpec};
pub use generator::{Generator, GeneratorConfig, GeneratorTape};

/// SHA-256 over every parameter and buffer (names, shapes, little-endian
/// values), hex encoded.
pub fn param_hash<T: Real, M: Module<T>>(model: &M) -> String {
    let mut h = Sha256::new();
    for (name, a) in model.named_params().into_iter().chain(model.named_buffers()) {
        h.update(name.as_bytes());
        for &d in a.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in a.iter() {
            h.update(v.f64().to_le_bytes());
        }
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
