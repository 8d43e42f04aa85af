use ndarray::{Array2, Array4, ArrayViewD, ArrayViewMutD, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::nn::layers::{leaky_relu, leaky_relu_backward};
use crate::nn::{
    join, BatchNorm, BatchNormCache, BatchStats, Conv2d, ConvCache, Dropout, Linear, MaxPool2d, Module, PoolCache,
};
use crate::real::Real;
use crate::rng::{stream, stream_rng, Rng};

/// One convolution block: same-padded convolution, batch normalization, leaky
/// rectifier, max pooling by `stride` (1 disables pooling), dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlockSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub conv_blocks: Vec<ConvBlockSpec>,
    pub leaky_slope: f64,
    pub dropout_rate: f64,
    pub feature_dim: usize,
    pub n_classes: usize,
}

impl ClassifierConfig {
    /// 28×28 grayscale default: blocks of 32, 64, 128 channels, 128 features.
    pub fn mnist(n_classes: usize) -> Self {
        let block = |c| ConvBlockSpec { out_channels: c, kernel: 3, stride: 2 };
        Self {
            in_channels: 1,
            image_size: 28,
            conv_blocks: vec![block(32), block(64), block(128)],
            leaky_slope: 0.01,
            dropout_rate: 0.3,
            feature_dim: 128,
            n_classes,
        }
    }

    /// 32×32 color default: blocks of 64, 128, 256 channels, 256 features.
    pub fn cifar(n_classes: usize) -> Self {
        let block = |c| ConvBlockSpec { out_channels: c, kernel: 3, stride: 2 };
        Self {
            in_channels: 3,
            image_size: 32,
            conv_blocks: vec![block(64), block(128), block(256)],
            leaky_slope: 0.01,
            dropout_rate: 0.3,
            feature_dim: 256,
            n_classes,
        }
    }

    /// Spatial extent after the convolution stack.
    pub fn final_spatial(&self) -> Result<usize> {
        let mut size = self.image_size;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.stride == 0 || b.kernel % 2 == 0 {
                return Err(Error::Config(format!("block {i}: kernel must be odd and stride positive")));
            }
            size /= b.stride;
            if size == 0 {
                return Err(Error::Config(format!("block {i} reduces the spatial size to zero")));
            }
        }
        Ok(size)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("a classifier needs at least two classes".into()));
        }
        if self.in_channels == 0 || self.conv_blocks.iter().any(|b| b.out_channels == 0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        self.final_spatial().map(|_| ())
    }
}

#[derive(Clone, Debug)]
struct ConvBlock<T> {
    conv: Conv2d<T>,
    bn: BatchNorm<T>,
}

/// Convolutional classifier. `features` are the activations entering the final
/// fully connected layer (taken before that layer's dropout).
#[derive(Clone, Debug)]
pub struct Classifier<T> {
    pub config: ClassifierConfig,
    blocks: Vec<ConvBlock<T>>,
    fc: Linear<T>,
    head: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct ClassifierOutput<T> {
    pub logits: Array2<T>,
    pub probabilities: Array2<T>,
    pub features: Array2<T>,
}

struct BlockTape<T> {
    conv: ConvCache<T>,
    bn: BatchNormCache<T>,
    act: Array4<T>,
    pool: Option<PoolCache>,
    drop: Option<Array4<T>>,
}

/// Intermediate values retained by a forward pass for [`Classifier::backward`].
pub struct ClassifierTape<T> {
    blocks: Vec<BlockTape<T>>,
    flat_dim: (usize, usize, usize, usize),
    flat: Array2<T>,
    features: Array2<T>,
    head_in: Array2<T>,
    head_drop: Option<Array2<T>>,
}

/// Row-wise softmax.
pub fn softmax<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s: T = row.sum();
        row /= s;
    }
    p
}

impl<T: Real> Classifier<T> {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, stream::INIT);
        let mut blocks = Vec::new();
        let mut channels = config.in_channels;
        for b in &config.conv_blocks {
            blocks.push(ConvBlock {
                conv: Conv2d::new(channels, b.out_channels, b.kernel, 1, b.kernel / 2, &mut rng),
                bn: BatchNorm::new(b.out_channels),
            });
            channels = b.out_channels;
        }
        let s = config.final_spatial()?;
        let fc = Linear::new(channels * s * s, config.feature_dim, &mut rng);
        let head = Linear::new(config.feature_dim, config.n_classes, &mut rng);
        Ok(Self { config, blocks, fc, head })
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn check_input(&self, x: &Array4<T>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        let s = self.config.image_size;
        if (c, h, w) != (self.config.in_channels, s, s) {
            return arg_err(format!(
                "classifier expects [B, {}, {s}, {s}], got {:?}",
                self.config.in_channels,
                x.dim()
            ));
        }
        Ok(())
    }

    /// Evaluation-mode forward pass: no dropout, running normalization stats.
    pub fn forward(&self, x: &Array4<T>) -> Result<(ClassifierOutput<T>, ClassifierTape<T>)> {
        self.check_input(x)?;
        let (out, tape, _) = self.run(x, None);
        Ok((out, tape))
    }

    /// Training-mode forward pass; updates the running normalization stats.
    pub fn forward_train(&mut self, x: &Array4<T>, rng: &mut Rng) -> Result<(ClassifierOutput<T>, ClassifierTape<T>)> {
        self.check_input(x)?;
        let (out, tape, stats) = self.run(x, Some(rng));
        for (block, s) in self.blocks.iter_mut().zip(&stats) {
            block.bn.commit(s);
        }
        Ok((out, tape))
    }

    fn run(
        &self,
        x: &Array4<T>,
        mut rng: Option<&mut Rng>,
    ) -> (ClassifierOutput<T>, ClassifierTape<T>, Vec<BatchStats<T>>) {
        let slope = self.config.leaky_slope;
        let drop = Dropout { rate: self.config.dropout_rate };
        let mut tapes = Vec::with_capacity(self.blocks.len());
        let mut stats = Vec::new();
        let mut h = x.clone();
        for (block, spec) in self.blocks.iter().zip(&self.config.conv_blocks) {
            let (y, conv) = block.conv.forward(&h);
            let (mut y, bn) = if rng.is_some() {
                let (y, cache, s) = block.bn.forward_batch(&y);
                stats.push(s);
                (y, cache)
            } else {
                block.bn.forward_eval(&y)
            };
            leaky_relu(&mut y, slope);
            let act = y.clone();
            let (mut y, pool) = if spec.stride > 1 {
                let (p, c) = MaxPool2d { size: spec.stride }.forward(&y);
                (p, Some(c))
            } else {
                (y, None)
            };
            let mask = drop.apply(&mut y, rng.as_deref_mut());
            tapes.push(BlockTape { conv, bn, act, pool, drop: mask });
            h = y;
        }
        let flat_dim = h.dim();
        let flat = h
            .into_shape_with_order((flat_dim.0, flat_dim.1 * flat_dim.2 * flat_dim.3))
            .expect("contiguous");
        let mut features = self.fc.forward(&flat);
        leaky_relu(&mut features, slope);
        let mut head_in = features.clone();
        let head_drop = drop.apply(&mut head_in, rng);
        let logits = self.head.forward(&head_in);
        let probabilities = softmax(&logits);
        (
            ClassifierOutput { logits, probabilities, features: features.clone() },
            ClassifierTape { blocks: tapes, flat_dim, flat, features, head_in, head_drop },
            stats,
        )
    }

    /// Logits for a batch of penultimate feature vectors.
    pub fn head_forward(&self, features: &Array2<T>) -> Result<Array2<T>> {
        if features.ncols() != self.config.feature_dim {
            return arg_err(format!(
                "head expects width {}, got {}",
                self.config.feature_dim,
                features.ncols()
            ));
        }
        Ok(self.head.forward(features))
    }

    pub fn head_bias(&self) -> &ndarray::Array1<T> {
        &self.head.bias
    }

    /// Gradient with respect to the input images given gradients on the logits
    /// and/or the features. Parameter gradients are added into `grads` when
    /// given.
    pub fn backward(
        &self,
        tape: &ClassifierTape<T>,
        d_logits: Option<&Array2<T>>,
        d_features: Option<&Array2<T>>,
        mut grads: Option<&mut Self>,
    ) -> Array4<T> {
        let mut d_feat = match d_logits {
            Some(dl) => {
                let mut d_in = self.head.backward(&tape.head_in, dl, grads.as_deref_mut().map(|g| &mut g.head));
                Dropout::backward(tape.head_drop.as_ref(), &mut d_in);
                d_in
            }
            None => Array2::zeros(tape.features.raw_dim()),
        };
        if let Some(df) = d_features {
            d_feat += df;
        }
        leaky_relu_backward(&tape.features, &mut d_feat, self.config.leaky_slope);
        let d_flat = self.fc.backward(&tape.flat, &d_feat, grads.as_deref_mut().map(|g| &mut g.fc));
        let mut d = d_flat.into_shape_with_order(tape.flat_dim).expect("flattened size");
        for (i, (block, bt)) in self.blocks.iter().zip(&tape.blocks).enumerate().rev() {
            Dropout::backward(bt.drop.as_ref(), &mut d);
            if let Some(pc) = &bt.pool {
                d = MaxPool2d { size: self.config.conv_blocks[i].stride }.backward(pc, &d);
            }
            leaky_relu_backward(&bt.act, &mut d, self.config.leaky_slope);
            let gb = grads.as_deref_mut().map(|g| &mut g.blocks[i]);
            let (g_bn, g_conv) = match gb {
                Some(g) => (Some(&mut g.bn), Some(&mut g.conv)),
                None => (None, None),
            };
            d = block.bn.backward(&bt.bn, &d, g_bn);
            d = block.conv.backward(&bt.conv, &d, g_conv);
        }
        d
    }

    /// Class predictions in evaluation mode, processed in chunks.
    pub fn predict(&self, x: &Array4<T>, chunk: usize) -> Result<Array2<T>> {
        let mut probs = Vec::new();
        for start in (0..x.dim().0).step_by(chunk.max(1)) {
            let end = (start + chunk.max(1)).min(x.dim().0);
            let xb = x.slice(ndarray::s![start..end, .., .., ..]).to_owned();
            probs.push(self.forward(&xb)?.0.probabilities);
        }
        if probs.is_empty() {
            return Ok(Array2::zeros((0, self.n_classes())));
        }
        let views: Vec<_> = probs.iter().map(|p| p.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("same width"))
    }

    /// Penultimate features in evaluation mode, processed in chunks.
    pub fn features(&self, x: &Array4<T>, chunk: usize) -> Result<Array2<T>> {
        let mut feats = Vec::new();
        for start in (0..x.dim().0).step_by(chunk.max(1)) {
            let end = (start + chunk.max(1)).min(x.dim().0);
            let xb = x.slice(ndarray::s![start..end, .., .., ..]).to_owned();
            feats.push(self.forward(&xb)?.0.features);
        }
        if feats.is_empty() {
            return Ok(Array2::zeros((0, self.feature_dim())));
        }
        let views: Vec<_> = feats.iter().map(|p| p.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("same width"))
    }

    pub fn cast<U: Real>(&self) -> Classifier<U> {
        let mut out = Classifier::<U>::new(self.config.clone(), 0).expect("validated config");
        for (mut dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.zip_mut_with(&src, |d, &s| *d = U::of(s.f64()));
        }
        for (mut dst, (_, src)) in out.buffers_mut().into_iter().zip(self.named_buffers()) {
            dst.zip_mut_with(&src, |d, &s| *d = U::of(s.f64()));
        }
        out
    }
}

impl<T: Real> Module<T> for Classifier<T> {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.conv.visit_params(&join(prefix, &format!("block{i}.conv")), out);
            b.bn.visit_params(&join(prefix, &format!("block{i}.bn")), out);
        }
        self.fc.visit_params(&join(prefix, "fc"), out);
        self.head.visit_params(&join(prefix, "head"), out);
    }

    fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, T>>) {
        for b in &mut self.blocks {
            b.conv.visit_params_mut(out);
            b.bn.visit_params_mut(out);
        }
        self.fc.visit_params_mut(out);
        self.head.visit_params_mut(out);
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.bn.visit_buffers(&join(prefix, &format!("block{i}.bn")), out);
        }
    }

    fn visit_buffers_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, T>>) {
        for b in &mut self.blocks {
            b.bn.visit_buffers_mut(out);
        }
    }
}
