use ndarray::{Array, Array1, Array2, Array4, ArrayViewD, ArrayViewMutD, Axis, Dimension, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, Uniform};

use super::im2col::{col2im, conv_out, from_channel_major, im2col, to_channel_major};
use super::{join, Module};
use crate::real::Real;
use crate::rng::Rng;

fn uniform_array<T: Real, D: Dimension>(shape: D, bound: f64, rng: &mut Rng) -> Array<T, D> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array::from_shape_simple_fn(shape, || T::of(dist.sample(rng)))
}

/// Fully connected layer, `y = x Wᵀ + b`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            weight: uniform_array(ndarray::Ix2(out_features, in_features), bound, rng),
            bias: uniform_array(ndarray::Ix1(out_features), bound, rng),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.nrows()
    }

    /// Output is always in standard (row-major) layout.
    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let y = x.dot(&self.weight.t()) + &self.bias;
        if y.is_standard_layout() {
            y
        } else {
            y.as_standard_layout().into_owned()
        }
    }

    /// `x` is the input seen by the matching forward pass.
    pub fn backward(&self, x: &Array2<T>, dy: &Array2<T>, grads: Option<&mut Self>) -> Array2<T> {
        if let Some(g) = grads {
            g.weight += &dy.t().dot(x);
            g.bias += &dy.sum_axis(Axis(0));
        }
        dy.dot(&self.weight)
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        out.push((join(prefix, "weight"), self.weight.view().into_dyn()));
        out.push((join(prefix, "bias"), self.bias.view().into_dyn()));
    }

    fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, T>>) {
        out.push(self.weight.view_mut().into_dyn());
        out.push(self.bias.view_mut().into_dyn());
    }
}

/// 2-D convolution with square kernels. Weight layout `[out, in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Array4<T>,
    pub bias: Array1<T>,
    pub stride: usize,
    pub padding: usize,
}

pub struct ConvCache<T> {
    cols: Array2<T>,
    in_dim: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        Self {
            weight: uniform_array(ndarray::Ix4(out_channels, in_channels, kernel, kernel), bound, rng),
            bias: uniform_array(ndarray::Ix1(out_channels), bound, rng),
            stride,
            padding,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    pub fn out_size(&self, size: usize) -> Option<usize> {
        conv_out(size, self.kernel(), self.stride, self.padding)
    }

    pub fn forward(&self, x: &Array4<T>) -> (Array4<T>, ConvCache<T>) {
        let (b, c, h, w) = x.dim();
        let (o, _, k, _) = self.weight.dim();
        let oh = self.out_size(h).expect("validated geometry");
        let ow = self.out_size(w).expect("validated geometry");
        let cols = im2col(x.view(), k, self.stride, self.padding, (oh, ow));
        let wm = self.weight.view().into_shape_with_order((o, c * k * k)).expect("contiguous");
        let mut ym = wm.dot(&cols);
        for (mut row, &bias) in ym.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row += bias;
        }
        let y = from_channel_major(ym, b, oh, ow);
        (y, ConvCache { cols, in_dim: (b, c, h, w), out_hw: (oh, ow) })
    }

    pub fn backward(&self, cache: &ConvCache<T>, dy: &Array4<T>, grads: Option<&mut Self>) -> Array4<T> {
        let (o, c, k, _) = self.weight.dim();
        let dym = to_channel_major(dy.view());
        if let Some(g) = grads {
            let dw = dym.dot(&cache.cols.t());
            g.weight += &dw.into_shape_with_order((o, c, k, k)).expect("matching size");
            g.bias += &dym.sum_axis(Axis(1));
        }
        let wm = self.weight.view().into_shape_with_order((o, c * k * k)).expect("contiguous");
        let dcols = wm.t().dot(&dym);
        col2im(dcols.view(), cache.in_dim, k, self.stride, self.padding, cache.out_hw)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        out.push((join(prefix, "weight"), self.weight.view().into_dyn()));
        out.push((join(prefix, "bias"), self.bias.view().into_dyn()));
    }

    fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, T>>) {
        out.push(self.weight.view_mut().into_dyn());
        out.push(self.bias.view_mut().into_dyn());
    }
}

/// Transposed convolution. Weight layout `[in, out, k, k]`; output extent is
/// `(in - 1) * stride - 2 * padding + k`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T> {
    pub weight: Array4<T>,
    pub bias: Array1<T>,
    pub stride: usize,
    pub padding: usize,
}

pub struct ConvTransposeCache<T> {
    x_mat: Array2<T>,
    in_dim: (usize, usize, usize, usize),
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = 1.0 / ((out_channels * kernel * kernel) as f64).sqrt();
        Self {
            weight: uniform_array(ndarray::Ix4(in_channels, out_channels, kernel, kernel), bound, rng),
            bias: uniform_array(ndarray::Ix1(out_channels), bound, rng),
            stride,
            padding,
        }
    }

    pub fn out_size(&self, size: usize) -> Option<usize> {
        let k = self.weight.dim().2;
        let full = (size.checked_sub(1)?) * self.stride + k;
        full.checked_sub(2 * self.padding).filter(|&s| s > 0)
    }

    pub fn forward(&self, x: &Array4<T>) -> (Array4<T>, ConvTransposeCache<T>) {
        let (b, c, h, w) = x.dim();
        let (_, o, k, _) = self.weight.dim();
        let oh = self.out_size(h).expect("validated geometry");
        let ow = self.out_size(w).expect("validated geometry");
        let x_mat = to_channel_major(x.view());
        let wm = self.weight.view().into_shape_with_order((c, o * k * k)).expect("contiguous");
        let cols = wm.t().dot(&x_mat);
        let mut y = col2im(cols.view(), (b, o, oh, ow), k, self.stride, self.padding, (h, w));
        for mut img in y.axis_iter_mut(Axis(0)) {
            for (mut plane, &bias) in img.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
                plane += bias;
            }
        }
        (y, ConvTransposeCache { x_mat, in_dim: (b, c, h, w) })
    }

    pub fn backward(
        &self,
        cache: &ConvTransposeCache<T>,
        dy: &Array4<T>,
        grads: Option<&mut Self>,
    ) -> Array4<T> {
        let (b, c, h, w) = cache.in_dim;
        let (_, o, k, _) = self.weight.dim();
        let dcols = im2col(dy.view(), k, self.stride, self.padding, (h, w));
        if let Some(g) = grads {
            let dw = cache.x_mat.dot(&dcols.t());
            g.weight += &dw.into_shape_with_order((c, o, k, k)).expect("matching size");
            g.bias += &dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
        }
        let wm = self.weight.view().into_shape_with_order((c, o * k * k)).expect("contiguous");
        let dx = wm.dot(&dcols);
        from_channel_major(dx, b, h, w)
    }
}

impl<T: Real> Module<T> for ConvTranspose2d<T> {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        out.push((join(prefix, "weight"), self.weight.view().into_dyn()));
        out.push((join(prefix, "bias"), self.bias.view().into_dyn()));
    }

    fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, T>>) {
        out.push(self.weight.view_mut().into_dyn());
        out.push(self.bias.view_mut().into_dyn());
    }
}

/// Per-channel batch normalization over `[B, C, H, W]` (dense activations use
/// `H = W = 1`). Running statistics follow the exponential-average convention
/// with the unbiased batch variance.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    pub eps: f64,
    pub momentum: f64,
}

/// Biased per-channel batch mean and variance over `count` values each.
pub struct BatchStats<T> {
    pub mean: Array1<T>,
    pub var: Array1<T>,
    pub count: usize,
}

pub struct BatchNormCache<T> {
    x_hat: Array4<T>,
    inv_std: Array1<T>,
    batch_stats: bool,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward_train(&mut self, x: &Array4<T>) -> (Array4<T>, BatchNormCache<T>) {
        let (y, cache, stats) = self.forward_batch(x);
        self.commit(&stats);
        (y, cache)
    }

    /// Normalizes with batch statistics without touching the running stats;
    /// pair with [`BatchNorm::commit`].
    pub fn forward_batch(&self, x: &Array4<T>) -> (Array4<T>, BatchNormCache<T>, BatchStats<T>) {
        let (b, c, h, w) = x.dim();
        let n = b * h * w;
        let mut mean = Array1::<T>::zeros(c);
        let mut var = Array1::<T>::zeros(c);
        for ci in 0..c {
            let lane = x.index_axis(Axis(1), ci);
            let m = lane.iter().map(|v| v.f64()).sum::<f64>() / n as f64;
            let v = lane.iter().map(|v| (v.f64() - m).powi(2)).sum::<f64>() / n as f64;
            mean[ci] = T::of(m);
            var[ci] = T::of(v);
        }
        let inv_std = var.mapv(|v| T::one() / (v + T::of(self.eps)).sqrt());
        let (y, cache) = self.apply(x, &mean, inv_std, true);
        (y, cache, BatchStats { mean, var, count: n })
    }

    /// Folds batch statistics into the running averages.
    pub fn commit(&mut self, stats: &BatchStats<T>) {
        let mom = T::of(self.momentum);
        let n = stats.count as f64;
        let unbias = T::of(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
        Zip::from(&mut self.running_mean).and(&stats.mean).for_each(|r, &m| *r = (T::one() - mom) * *r + mom * m);
        Zip::from(&mut self.running_var)
            .and(&stats.var)
            .for_each(|r, &v| *r = (T::one() - mom) * *r + mom * v * unbias);
    }

    pub fn forward_eval(&self, x: &Array4<T>) -> (Array4<T>, BatchNormCache<T>) {
        let inv_std = self.running_var.mapv(|v| T::one() / (v + T::of(self.eps)).sqrt());
        self.apply(x, &self.running_mean, inv_std, false)
    }

    fn apply(
        &self,
        x: &Array4<T>,
        mean: &Array1<T>,
        inv_std: Array1<T>,
        batch_stats: bool,
    ) -> (Array4<T>, BatchNormCache<T>) {
        let mut x_hat = x.clone();
        let mut y = x.clone();
        for ci in 0..x.dim().1 {
            let (m, s, g, bt) = (mean[ci], inv_std[ci], self.gamma[ci], self.beta[ci]);
            x_hat.index_axis_mut(Axis(1), ci).mapv_inplace(|v| (v - m) * s);
            Zip::from(y.index_axis_mut(Axis(1), ci))
                .and(x_hat.index_axis(Axis(1), ci))
                .for_each(|o, &xh| *o = g * xh + bt);
        }
        (y, BatchNormCache { x_hat, inv_std, batch_stats })
    }

    pub fn backward(&self, cache: &BatchNormCache<T>, dy: &Array4<T>, grads: Option<&mut Self>) -> Array4<T> {
        let (b, c, h, w) = dy.dim();
        let n = T::of((b * h * w) as f64);
        let mut dx = Array4::<T>::zeros(dy.dim());
        let mut dgamma = Array1::<T>::zeros(c);
        let mut dbeta = Array1::<T>::zeros(c);
        for ci in 0..c {
            let dyc = dy.index_axis(Axis(1), ci);
            let xh = cache.x_hat.index_axis(Axis(1), ci);
            let sum_dy: T = dyc.iter().copied().sum();
            let sum_dy_xh: T = Zip::from(&dyc).and(&xh).fold(T::zero(), |acc, &d, &x| acc + d * x);
            dgamma[ci] = sum_dy_xh;
            dbeta[ci] = sum_dy;
            let g = self.gamma[ci];
            let s = cache.inv_std[ci];
            let mut dxc = dx.index_axis_mut(Axis(1), ci);
            if cache.batch_stats {
                let k = g * s / n;
                Zip::from(&mut dxc)
                    .and(&dyc)
                    .and(&xh)
                    .for_each(|o, &d, &x| *o = k * (n * d - sum_dy - x * sum_dy_xh));
            } else {
                let k = g * s;
                Zip::from(&mut dxc).and(&dyc).for_each(|o, &d| *o = k * d);
            }
        }
        if let Some(gr) = grads {
            gr.gamma += &dgamma;
            gr.beta += &dbeta;
        }
        dx
    }
}

impl<T: Real> Module<T> for BatchNorm<T> {
    fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        out.push((join(prefix, "gamma"), self.gamma.view().into_dyn()));
        out.push((join(prefix, "beta"), self.beta.view().into_dyn()));
    }

    fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, T>>) {
        out.push(self.gamma.view_mut().into_dyn());
        out.push(self.beta.view_mut().into_dyn());
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, T>)>) {
        out.push((join(prefix, "running_mean"), self.running_mean.view().into_dyn()));
        out.push((join(prefix, "running_var"), self.running_var.view().into_dyn()));
    }

    fn visit_buffers_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, T>>) {
        out.push(self.running_mean.view_mut().into_dyn());
        out.push(self.running_var.view_mut().into_dyn());
    }
}

/// Non-overlapping max pooling with a square window; trailing rows and columns
/// that do not fill a window are dropped.
#[derive(Clone, Copy, Debug)]
pub struct MaxPool2d {
    pub size: usize,
}

pub struct PoolCache {
    argmax: Vec<usize>,
    in_dim: (usize, usize, usize, usize),
}

impl MaxPool2d {
    pub fn forward<T: Real>(&self, x: &Array4<T>) -> (Array4<T>, PoolCache) {
        let (b, c, h, w) = x.dim();
        let s = self.size;
        let (oh, ow) = (h / s, w / s);
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut y = Array4::<T>::zeros((b, c, oh, ow));
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        let ys = y.as_slice_mut().expect("fresh array");
        let mut o = 0;
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * s * w + ox * s;
                    for dy in 0..s {
                        for dx in 0..s {
                            let idx = base + (oy * s + dy) * w + ox * s + dx;
                            if xs[idx] > xs[best] {
                                best = idx;
                            }
                        }
                    }
                    ys[o] = xs[best];
                    argmax.push(best);
                    o += 1;
                }
            }
        }
        (y, PoolCache { argmax, in_dim: (b, c, h, w) })
    }

    pub fn backward<T: Real>(&self, cache: &PoolCache, dy: &Array4<T>) -> Array4<T> {
        let mut dx = Array4::<T>::zeros(cache.in_dim);
        let dxs = dx.as_slice_mut().expect("fresh array");
        let dy = dy.as_standard_layout();
        for (&idx, &g) in cache.argmax.iter().zip(dy.iter()) {
            dxs[idx] += g;
        }
        dx
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)`.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    /// Applies a fresh mask in place and returns it; `None` when inactive.
    pub fn apply<T: Real, D: Dimension>(&self, x: &mut Array<T, D>, rng: Option<&mut Rng>) -> Option<Array<T, D>> {
        let rng = rng?;
        if self.rate <= 0.0 {
            return None;
        }
        let keep = 1.0 - self.rate;
        let scale = T::of(1.0 / keep);
        let mask = x.map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() });
        *x *= &mask;
        Some(mask)
    }

    pub fn backward<T: Real, D: Dimension>(mask: Option<&Array<T, D>>, dy: &mut Array<T, D>) {
        if let Some(m) = mask {
            *dy *= m;
        }
    }
}

/// Leaky rectifier; `slope = 0` gives the plain rectifier.
pub fn leaky_relu<T: Real, D: Dimension>(x: &mut Array<T, D>, slope: f64) {
    let s = T::of(slope);
    x.mapv_inplace(|v| if v > T::zero() { v } else { v * s });
}

/// Backward of [`leaky_relu`] given its output (sign of output = sign of input).
pub fn leaky_relu_backward<T: Real, D: Dimension>(y: &Array<T, D>, dy: &mut Array<T, D>, slope: f64) {
    let s = T::of(slope);
    Zip::from(dy).and(y).for_each(|d, &o| {
        if o <= T::zero() {
            *d *= s;
        }
    });
}

pub fn sigmoid<T: Real, D: Dimension>(x: &mut Array<T, D>) {
    x.mapv_inplace(|v| T::one() / (T::one() + (-v).exp()));
}

pub fn sigmoid_backward<T: Real, D: Dimension>(y: &Array<T, D>, dy: &mut Array<T, D>) {
    Zip::from(dy).and(y).for_each(|d, &o| *d *= o * (T::one() - o));
}
