use ndarray::{Array2, Array4, ArrayView2, ArrayView4};

use crate::real::Real;

/// Output extent of a convolution over `size` input pixels.
pub(crate) fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unfolds `x` [B, C, H, W] into columns [C*k*k, B*OH*OW].
pub(crate) fn im2col<T: Real>(
    x: ArrayView4<T>,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
) -> Array2<T> {
    let (b, c, h, w) = x.dim();
    let (oh, ow) = out_hw;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let ncols = b * oh * ow;
    let mut cols = Array2::<T>::zeros((c * kernel * kernel, ncols));
    let cs = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ci * kernel + ki) * kernel + kj;
                let dst = &mut cs[row * ncols..(row + 1) * ncols];
                for bi in 0..b {
                    let plane = &xs[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let base = (bi * oh + oy) * ow;
                        for ox in 0..ow {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[base + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds columns back, summing overlapping taps.
pub(crate) fn col2im<T: Real>(
    cols: ArrayView2<T>,
    dims: (usize, usize, usize, usize),
    kernel: usize,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
) -> Array4<T> {
    let (b, c, h, w) = dims;
    let (oh, ow) = out_hw;
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let ncols = b * oh * ow;
    let mut x = Array4::<T>::zeros(dims);
    let xs = x.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ci * kernel + ki) * kernel + kj;
                let src = &cs[row * ncols..(row + 1) * ncols];
                for bi in 0..b {
                    let plane = &mut xs[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for oy in 0..oh {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let base = (bi * oh + oy) * ow;
                        for ox in 0..ow {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// [B, C, H, W] -> [C, B*H*W]
pub(crate) fn to_channel_major<T: Real>(x: ArrayView4<T>) -> Array2<T> {
    let (b, c, h, w) = x.dim();
    let p = x.permuted_axes([1, 0, 2, 3]);
    let p = p.as_standard_layout().into_owned();
    p.into_shape_with_order((c, b * h * w)).expect("contiguous")
}

/// [C, B*H*W] -> [B, C, H, W]
pub(crate) fn from_channel_major<T: Real>(m: Array2<T>, b: usize, h: usize, w: usize) -> Array4<T> {
    let c = m.nrows();
    let a = m
        .into_shape_with_order((c, b, h, w))
        .expect("matching element count");
    a.permuted_axes([1, 0, 2, 3]).as_standard_layout().into_owned()
}
