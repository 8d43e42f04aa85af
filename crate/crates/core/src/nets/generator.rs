use ndarray::{concatenate, s, Array2, Array4, ArrayViewD, ArrayViewMutD, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conditioning::{Condition, ConditioningMode};
use crate::error::{arg_err, Error, Result};
use crate::nn::layers::{leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward};
use crate::nn::{
    join, BatchNorm, BatchNormCache, BatchStats, ConvTranspose2d, ConvTransposeCache, Dropout, Linear, Module,
};
use crate::real::Real;
use crate::rng::{stream, stream_rng, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub n_classes: usize,
    pub conditioning_mode: ConditioningMode,
    pub image_size: usize,
    pub channels: usize,
    pub base_channels: usize,
    pub dropout_rate: f64,
}

impl GeneratorConfig {
    pub fn new(n_classes: usize, mode: ConditioningMode, channels: usize, image_size: usize) -> Self {
        Self {
            latent_dim: 100,
            n_classes,
            conditioning_mode: mode,
            image_size,
            channels,
            base_channels: 32,
            dropout_rate: 0.3,
        }
    }

    /// Side of the seed activation produced by the dense layer.
    fn seed_side(&self) -> usize {
        self.n_classes.div_ceil(2)
    }

    /// Kernel of the upsampling step that lands exactly on N×N.
    fn up_kernel(&self) -> usize {
        if self.n_classes.is_multiple_of(2) {
            4
        } else {
            3
        }
    }

    /// `(kernel, stride, padding)` of each layer after the N×N stage.
    fn tail(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (n, t) = (self.n_classes, self.image_size);
        if t >= 2 * n && t % 2 == 0 {
            Ok(vec![(t / 2 - n + 1, 1, 0), (4, 2, 1)])
        } else if t >= n && t < 2 * n {
            Ok(vec![(t - n + 1, 1, 0), (3, 1, 1)])
        } else {
            Err(Error::Config(format!("cannot upsample from {n}x{n} to {t}x{t}")))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![28, 32].contains(&self.image_size) {
            return Err(Error::Config(format!("image_size {} not in {{28, 32}}", self.image_size)));
        }
        if ![1, 3].contains(&self.channels) {
            return Err(Error::Config(format!("channels {} not in {{1, 3}}", self.channels)));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("the generator needs at least two classes".into()));
        }
        if self.latent_dim == 0 || self.base_channels == 0 {
            return Err(Error::Config("latent_dim and base_channels must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        self.tail().map(|_| ())
    }
}

#[derive(Clone, Debug)]
struct DeconvBlock<T> {
    deconv: ConvTranspose2d<T>,
    bn: BatchNorm<T>,
}

/// Conditioned deconvolutional generator.
///
/// latent (+ soft vector or label embedding) → dense → `[4b, ⌈N/2⌉, ⌈N/2⌉]`
/// → upsample to `[2b, N, N]` (+ hot-matrix channel) → tail to the target
/// size → sigmoid. Every hidden stage is batch-normalized, rectified and
/// followed by dropout.
#[derive(Clone, Debug)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    embedding: Option<Array2<T>>,
    dense: Linear<T>,
    bn0: BatchNorm<T>,
    blocks: Vec<DeconvBlock<T>>,
    out: ConvTranspose2d<T>,
}

struct StageTape<T> {
    deconv: Option<ConvTransposeCache<T>>,
    bn: BatchNormCache<T>,
    act: Array4<T>,
    drop: Option<Array4<T>>,
}

pub struct GeneratorTape<T> {
    input: Array2<T>,
    labels: Vec<usize>,
    stages: Vec<StageTape<T>>,
    out: ConvTransposeCache<T>,
    images: Array4<T>,
}

impl<T: Real> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, stream::INIT);
        let n = config.n_classes;
        let b = config.base_channels;
        let a = config.seed_side();
        let embedding = (config.conditioning_mode == ConditioningMode::Label)
            .then(|| Array2::from_shape_simple_fn((n, n), || T::of(StandardNormal.sample(&mut rng))));
        let cond_width = match config.conditioning_mode {
            ConditioningMode::IntermediateMatrix => 0,
            _ => n,
        };
        let dense = Linear::new(config.latent_dim + cond_width, 4 * b * a * a, &mut rng);
        let mut blocks = vec![DeconvBlock {
            deconv: ConvTranspose2d::new(4 * b, 2 * b, config.up_kernel(), 2, 1, &mut rng),
            bn: BatchNorm::new(2 * b),
        }];
        let tail = config.tail()?;
        let mut c = 2 * b + usize::from(config.conditioning_mode.uses_matrix());
        for &(k, st, p) in &tail[..tail.len() - 1] {
            blocks.push(DeconvBlock { deconv: ConvTranspose2d::new(c, b, k, st, p, &mut rng), bn: BatchNorm::new(b) });
            c = b;
        }
        let (k, st, p) = tail[tail.len() - 1];
        let out = ConvTranspose2d::new(c, config.channels, k, st, p, &mut rng);
        let g = Self { config, embedding, dense, bn0: BatchNorm::new(4 * b), blocks, out };
        debug_assert_eq!(g.output_side(), g.config.image_size);
        Ok(g)
    }

    fn output_side(&self) -> usize {
        let mut s = self.config.seed_side();
        for blk in &self.blocks {
            s = blk.deconv.out_size(s).unwrap_or(0);
        }
        self.out.out_size(s).unwrap_or(0)
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn mode(&self) -> ConditioningMode {
        self.config.conditioning_mode
    }

    /// Standard-normal latents `[batch, Z]`.
    pub fn sample_latent(&self, batch: usize, rng: &mut Rng) -> Array2<T> {
        Array2::from_shape_simple_fn((batch, self.config.latent_dim), || T::of(StandardNormal.sample(rng)))
    }

    fn check(&self, z: &Array2<T>, cond: &Condition) -> Result<()> {
        if cond.mode != self.config.conditioning_mode {
            return arg_err(format!(
                "condition mode {:?} does not match generator mode {:?}",
                cond.mode, self.config.conditioning_mode
            ));
        }
        if cond.n_classes != self.config.n_classes {
            return arg_err(format!("condition has {} classes, generator {}", cond.n_classes, self.config.n_classes));
        }
        if z.dim() != (cond.batch(), self.config.latent_dim) {
            return arg_err(format!(
                "latent shape {:?} does not match batch {} and latent_dim {}",
                z.dim(),
                cond.batch(),
                self.config.latent_dim
            ));
        }
        cond.validate()
    }

    /// Evaluation-mode generation: no dropout, running normalization stats.
    pub fn forward(&self, z: &Array2<T>, cond: &Condition) -> Result<(Array4<T>, GeneratorTape<T>)> {
        self.check(z, cond)?;
        let (x, tape, _) = self.run(z, cond, None);
        Ok((x, tape))
    }

    /// Training-mode generation with dropout; updates running stats.
    pub fn forward_train(
        &mut self,
        z: &Array2<T>,
        cond: &Condition,
        rng: &mut Rng,
    ) -> Result<(Array4<T>, GeneratorTape<T>)> {
        self.check(z, cond)?;
        let (x, tape, stats) = self.run(z, cond, Some(rng));
        let mut it = stats.iter();
        self.bn0.commit(it.next().expect("stem stats"));
        for (blk, s) in self.blocks.iter_mut().zip(it) {
            blk.bn.commit(s);
        }
        Ok((x, tape))
    }

    fn run(
        &self,
        z: &Array2<T>,
        cond: &Condition,
        mut rng: Option<&mut Rng>,
    ) -> (Array4<T>, GeneratorTape<T>, Vec<BatchStats<T>>) {
        let bsz = z.nrows();
        let b = self.config.base_channels;
        let a = self.config.seed_side();
        let n = self.config.n_classes;
        let drop = Dropout { rate: self.config.dropout_rate };
        let input = match (&self.embedding, &cond.soft_vector) {
            (Some(emb), _) => {
                let rows = emb.select(Axis(0), &cond.labels);
                concatenate(Axis(1), &[z.view(), rows.view()]).expect("same batch")
            }
            (None, Some(p)) => {
                let p = p.mapv(T::of);
                concatenate(Axis(1), &[z.view(), p.view()]).expect("same batch")
            }
            (None, None) => z.clone(),
        };
        let mut stats = Vec::new();
        let mut stages = Vec::new();
        let mut stage = |h: Array4<T>, bn: &BatchNorm<T>, deconv, rng: Option<&mut Rng>| {
            let (mut y, bn_cache) = if rng.is_some() {
                let (y, c, s) = bn.forward_batch(&h);
                stats.push(s);
                (y, c)
            } else {
                bn.forward_eval(&h)
            };
            leaky_relu(&mut y, 0.0);
            let act = y.clone();
            let mask = drop.apply(&mut y, rng);
            stages.push(StageTape { deconv, bn: bn_cache, act, drop: mask });
            y
        };
        let h = self.dense.forward(&input).into_shape_with_order((bsz, 4 * b, a, a)).expect("dense width");
        let mut h = stage(h, &self.bn0, None, rng.as_deref_mut());
        for (i, blk) in self.blocks.iter().enumerate() {
            let (y, cache) = blk.deconv.forward(&h);
            h = stage(y, &blk.bn, Some(cache), rng.as_deref_mut());
            if i == 0 {
                if let Some(m) = &cond.hot_matrix {
                    debug_assert_eq!(h.dim().2, n);
                    let m = m.mapv(|v| T::of(f64::from(v))).insert_axis(Axis(1));
                    h = concatenate(Axis(1), &[h.view(), m.view()]).expect("N×N stage");
                }
            }
        }
        let (mut images, out_cache) = self.out.forward(&h);
        sigmoid(&mut images);
        let tape = GeneratorTape {
            input,
            labels: cond.labels.clone(),
            stages,
            out: out_cache,
            images: images.clone(),
        };
        (images, tape, stats)
    }

    /// Accumulates parameter gradients for an upstream gradient on the images.
    pub fn backward(&self, tape: &GeneratorTape<T>, d_images: &Array4<T>, mut grads: Option<&mut Self>) {
        let mut d = d_images.clone();
        sigmoid_backward(&tape.images, &mut d);
        let mut d = self.out.backward(&tape.out, &d, grads.as_deref_mut().map(|g| &mut g.out));
        for (i, blk) in self.blocks.iter().enumerate().rev() {
            if i == 0 && self.config.conditioning_mode.uses_matrix() {
                let keep = d.dim().1 - 1;
                d = d.slice(s![.., ..keep, .., ..]).to_owned();
            }
            let st = &tape.stages[i + 1];
            Dropout::backward(st.drop.as_ref(), &mut d);
            leaky_relu_backward(&st.act, &mut d, 0.0);
            let (g_bn, g_dc) = match grads.as_deref_mut() {
                Some(g) => {
                    let gb = &mut g.blocks[i];
                    (Some(&mut gb.bn), Some(&mut gb.deconv))
                }
                None => (None, None),
            };
            d = blk.bn.backward(&st.bn, &d, g_bn);
            d = blk.deconv.backward(st.deconv.as_ref().expect("deconv stage"), &d, g_dc);
        }
        let st = &tape.stages[0];
        Dropout::backward(st.drop.as_ref(), &mut d);
        leaky_relu_backward(&st.act, &mut d, 0.0);
        d = self.bn0.backward(&st.bn, &d, grads.as_deref_mut().map(|g| &mut g.bn0));
        let bsz = d.dim().0;
        let d_flat = d.into_shape_with_order((bsz, self.dense.out_features())).expect("dense width");
        let d_in = self.dense.backward(&tape.input, &d_flat, grads.as_deref_mut().map(|g| &mut g.dense));
        if let Some(g) = grads {
            if let Some(emb) = &mut g.embedding {
                let z = self.config.latent_dim;
                for (row, &l) in tape.labels.iter().enumerate() {
                    let mut e = emb.row_mut(l);
                    e += &d_in.slice(s![row, z..]);
                }
            }
        }
    }
}

impl<T: Real> Module<T> for Generator<T> {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        if let Some(e) = &self.embedding {
            out.push((join(prefix, "embedding"), e.view().into_dyn()));
        }
        self.dense.visit_params(&join(prefix, "dense"), out);
        self.bn0.visit_params(&join(prefix, "bn0"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.deconv.visit_params(&join(prefix, &format!("block{i}.deconv")), out);
            b.bn.visit_params(&join(prefix, &format!("block{i}.bn")), out);
        }
        self.out.visit_params(&join(prefix, "out"), out);
    }

    fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, T>>) {
        if let Some(e) = &mut self.embedding {
            out.push(e.view_mut().into_dyn());
        }
        self.dense.visit_params_mut(out);
        self.bn0.visit_params_mut(out);
        for b in &mut self.blocks {
            b.deconv.visit_params_mut(out);
            b.bn.visit_params_mut(out);
        }
        self.out.visit_params_mut(out);
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        self.bn0.visit_buffers(&join(prefix, "bn0"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.bn.visit_buffers(&join(prefix, &format!("block{i}.bn")), out);
        }
    }

    fn visit_buffers_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, T>>) {
        self.bn0.visit_buffers_mut(out);
        for b in &mut self.blocks {
            b.bn.visit_buffers_mut(out);
        }
    }
}
