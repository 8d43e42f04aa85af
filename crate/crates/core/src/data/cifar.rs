//! CIFAR-10 binary batches: 3073-byte records, one label byte followed by the
//! 32x32 red, green and blue planes.

use std::fs;
use std::path::Path;

use ndarray::Array4;

use super::{ImageBatch, LabeledDataset, ValueRange};
use crate::error::{Error, Result};

pub const RECORD_BYTES: usize = 3073;
pub const CLASSES: usize = 10;
const SIDE: usize = 32;

pub fn parse_cifar10(bytes: &[u8]) -> Result<(Array4<f32>, Vec<usize>)> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Format(format!(
            "cifar batch of {} bytes is not a multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * 3 * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CLASSES {
            return Err(Error::Consistency(format!("record {i}: label {label} >= {CLASSES}")));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f32));
    }
    let images = Array4::from_shape_vec((n, 3, SIDE, SIDE), pixels).expect("size checked");
    Ok((images, labels))
}

/// Loads and concatenates one or more batch files.
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<LabeledDataset> {
    let mut bytes = Vec::new();
    for p in batch_paths {
        let chunk = fs::read(p.as_ref())?;
        if chunk.len() % RECORD_BYTES != 0 {
            return Err(Error::Format(format!(
                "{}: {} bytes is not a multiple of {RECORD_BYTES}",
                p.as_ref().display(),
                chunk.len()
            )));
        }
        bytes.extend(chunk);
    }
    let (images, labels) = parse_cifar10(&bytes)?;
    LabeledDataset::new(ImageBatch::new(images, ValueRange::Raw)?, labels, CLASSES)
}

pub fn to_cifar10_bytes(dataset: &LabeledDataset) -> Result<Vec<u8>> {
    let (_, c, h, w) = dataset.images.values.dim();
    if (c, h, w) != (3, SIDE, SIDE) {
        return Err(Error::Argument("cifar records hold 3x32x32 images".into()));
    }
    let pixels = super::idx::raw_bytes(&dataset.images)?;
    let mut out = Vec::with_capacity(dataset.len() * RECORD_BYTES);
    for (rec, &label) in pixels.chunks_exact(RECORD_BYTES - 1).zip(&dataset.labels) {
        out.push(label as u8);
        out.extend_from_slice(rec);
    }
    Ok(out)
}
