//! IDX container (MNIST family).
//!
//! ```text
//! images: 0x00000803 | n: u32 | rows: u32 | cols: u32 | n*rows*cols u8
//! labels: 0x00000801 | n: u32 | n u8
//! ```
//! All header integers are big-endian.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::Array4;

use super::{ImageBatch, LabeledDataset, ValueRange};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn truncated(what: &str, need: usize, have: usize) -> Error {
    Error::Io(io::Error::new(
        io::ErrorKind::UnexpectedEof,
        format!("{what}: truncated, need {need} bytes, have {have}"),
    ))
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| truncated(what, at + 4, bytes.len()))
}

/// Parses an IDX image file into `[n, 1, rows, cols]` raw pixels.
pub fn parse_images(bytes: &[u8]) -> Result<Array4<f32>> {
    let magic = be_u32(bytes, 0, "idx images header")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "idx images: magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "idx images header")? as usize;
    let rows = be_u32(bytes, 8, "idx images header")? as usize;
    let cols = be_u32(bytes, 12, "idx images header")? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(truncated("idx images", need, bytes.len()));
    }
    let pixels: Vec<f32> = bytes[16..need].iter().map(|&b| b as f32).collect();
    Ok(Array4::from_shape_vec((n, 1, rows, cols), pixels).expect("size checked"))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, "idx labels header")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "idx labels: magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "idx labels header")? as usize;
    let need = 8 + n;
    if bytes.len() < need {
        return Err(truncated("idx labels", need, bytes.len()));
    }
    Ok(bytes[8..need].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label IDX pair. The class count is inferred as the largest
/// label plus one unless given.
pub fn load_idx_with_classes(
    images_path: &Path,
    labels_path: &Path,
    n_classes: Option<usize>,
) -> Result<LabeledDataset> {
    let images = parse_images(&fs::read(images_path)?)?;
    let labels = parse_labels(&fs::read(labels_path)?)?;
    if images.dim().0 != labels.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            images.dim().0,
            labels.len()
        )));
    }
    let n_classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    LabeledDataset::new(ImageBatch::new(images, ValueRange::Raw)?, labels, n_classes)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    load_idx_with_classes(images_path, labels_path, None)
}

/// Serializes a raw-range single-channel dataset back into IDX bytes.
pub fn to_idx_bytes(dataset: &LabeledDataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let v = &dataset.images.values;
    let (n, c, h, w) = v.dim();
    if c != 1 {
        return Err(Error::Argument("idx stores single-channel images".into()));
    }
    let mut images = Vec::with_capacity(16 + v.len());
    for word in [IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        images.extend_from_slice(&word.to_be_bytes());
    }
    images.extend(raw_bytes(&dataset.images)?);
    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in &dataset.labels {
        labels.push(u8::try_from(l).map_err(|_| Error::Argument(format!("label {l} exceeds a byte")))?);
    }
    Ok((images, labels))
}

pub fn save_idx(dataset: &LabeledDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (images, labels) = to_idx_bytes(dataset)?;
    fs::write(images_path, images)?;
    fs::write(labels_path, labels)?;
    Ok(())
}

pub(crate) fn raw_bytes(batch: &ImageBatch) -> Result<Vec<u8>> {
    if batch.range != ValueRange::Raw {
        return Err(Error::Argument("byte serialization needs raw [0,255] pixels".into()));
    }
    batch
        .values
        .iter()
        .map(|&p| {
            if p.fract() == 0.0 && (0.0..=255.0).contains(&p) {
                Ok(p as u8)
            } else {
                Err(Error::Argument(format!("pixel {p} is not a byte value")))
            }
        })
        .collect()
}
