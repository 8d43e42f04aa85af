//! Checkpoint container.
//!
//! ```text
//! magic      8 bytes  "NINVCKPT"
//! version    u8       1
//! kind       u8       0 = classifier, 1 = generator
//! seed       u64 LE   training seed
//! config     u64 LE length + UTF-8 JSON echo of the model config
//! count      u64 LE   number of tensors
//! tensor     u64 LE name length + UTF-8 name
//!            u8 ndim, ndim × u64 LE dims
//!            u64 LE byte length + f32 LE data
//! ```
//!
//! Parameters are stored first, then normalization buffers, both in the
//! model's visiting order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{Classifier, ClassifierConfig, Generator, GeneratorConfig};
use crate::error::{Error, Result};
use crate::nn::Module;

pub const MAGIC: &[u8; 8] = b"NINVCKPT";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Classifier = 0,
    Generator = 1,
}

/// Decoded container contents.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub seed: u64,
    pub config_json: String,
    pub tensors: Vec<(String, ArrayD<f32>)>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.kind as u8);
        put_u64(&mut out, self.seed);
        put_u64(&mut out, self.config_json.len() as u64);
        out.extend_from_slice(self.config_json.as_bytes());
        put_u64(&mut out, self.tensors.len() as u64);
        for (name, t) in &self.tensors {
            put_u64(&mut out, name.len() as u64);
            out.extend_from_slice(name.as_bytes());
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                put_u64(&mut out, d as u64);
            }
            put_u64(&mut out, (t.len() * 4) as u64);
            for &v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = read_u8(&mut r)?;
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let kind = match read_u8(&mut r)? {
            0 => CheckpointKind::Classifier,
            1 => CheckpointKind::Generator,
            k => return Err(Error::Format(format!("unknown checkpoint kind {k}"))),
        };
        let seed = read_u64(&mut r)?;
        let config_json = String::from_utf8(read_blob(&mut r)?)
            .map_err(|_| Error::Format("config echo is not UTF-8".into()))?;
        let count = read_u64(&mut r)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = String::from_utf8(read_blob(&mut r)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let ndim = read_u8(&mut r)? as usize;
            let dims = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let data = read_blob(&mut r)?;
            let numel: usize = dims.iter().product();
            if data.len() != numel * 4 {
                return Err(Error::Format(format!("tensor {name}: {} bytes for shape {dims:?}", data.len())));
            }
            let values = data.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = ArrayD::from_shape_vec(dims, values).expect("length checked");
            tensors.push((name, t));
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { kind, seed, config_json, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    fn capture<M: Module<f32>, C: Serialize>(kind: CheckpointKind, model: &M, config: &C, seed: u64) -> Self {
        let mut tensors: Vec<_> = model.named_params().into_iter().map(|(n, a)| (n, a.to_owned())).collect();
        tensors.extend(model.named_buffers().into_iter().map(|(n, a)| (format!("buffer:{n}"), a.to_owned())));
        Self {
            kind,
            seed,
            config_json: serde_json::to_string(config).expect("config serializes"),
            tensors,
        }
    }

    fn config<C: DeserializeOwned>(&self, want: CheckpointKind) -> Result<C> {
        if self.kind != want {
            return Err(Error::Format(format!("expected a {want:?} checkpoint, found {:?}", self.kind)));
        }
        serde_json::from_str(&self.config_json).map_err(|e| Error::Format(format!("config echo: {e}")))
    }

    fn restore<M: Module<f32>>(&self, model: &mut M) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = model
            .named_params()
            .into_iter()
            .map(|(n, a)| (n, a.shape().to_vec()))
            .chain(model.named_buffers().into_iter().map(|(n, a)| (format!("buffer:{n}"), a.shape().to_vec())))
            .collect();
        if expected.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape), (got_name, t)) in expected.iter().zip(&self.tensors) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Format(format!(
                    "tensor {got_name} {:?} does not match {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        let n_params = model.params().len();
        for (mut dst, (_, src)) in model.params_mut().into_iter().zip(&self.tensors[..n_params]) {
            dst.assign(src);
        }
        for (mut dst, (_, src)) in model.buffers_mut().into_iter().zip(&self.tensors[n_params..]) {
            dst.assign(src);
        }
        Ok(())
    }

    pub fn from_classifier(model: &Classifier<f32>, seed: u64) -> Self {
        Self::capture(CheckpointKind::Classifier, model, &model.config, seed)
    }

    pub fn from_generator(model: &Generator<f32>, seed: u64) -> Self {
        Self::capture(CheckpointKind::Generator, model, &model.config, seed)
    }

    pub fn to_classifier(&self) -> Result<Classifier<f32>> {
        let config: ClassifierConfig = self.config(CheckpointKind::Classifier)?;
        let mut model = Classifier::new(config, self.seed)?;
        self.restore(&mut model)?;
        Ok(model)
    }

    pub fn to_generator(&self) -> Result<Generator<f32>> {
        let config: GeneratorConfig = self.config(CheckpointKind::Generator)?;
        let mut model = Generator::new(config, self.seed)?;
        self.restore(&mut model)?;
        Ok(model)
    }
}

fn read_u8(r: &mut &[u8]) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_blob(r: &mut &[u8]) -> Result<Vec<u8>> {
    let len = read_u64(r)? as usize;
    if len > r.len() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!("field of {len} bytes exceeds the remaining {}", r.len()),
        )));
    }
    let (head, tail) = r.split_at(len);
    *r = tail;
    Ok(head.to_vec())
}
