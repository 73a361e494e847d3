//! 2-D cross-correlation with zero padding and stride 1 or 2.
//!
//! Output pixel `(y, x)` reads the window whose top-left input pixel is
//! `(stride*y - pad, stride*x - pad)`. With `pad = k/2` the window of a
//! stride-2 layer is centred on input pixel `(2y, 2x)`, the 0-based form of
//! the usual `2p - 1` sampling for 1-based indices.

use rayon::prelude::*;

use super::GradBundle;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Filter bank of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    /// `out_channels x in_channels x k x k`.
    pub weights: Tensor<T>,
    /// `out_channels`.
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let d = weights.dims();
        if d.len() != 4 {
            return Err(Error::Shape(format!("conv weights must be rank 4, got {}", weights.shape())));
        }
        if d[2] != d[3] {
            return Err(Error::Shape(format!("non-square kernel {}x{}", d[2], d[3])));
        }
        if d[2] % 2 == 0 {
            return Err(Error::Shape(format!("kernel size {} is not odd", d[2])));
        }
        if bias.dims() != [d[0]] {
            return Err(Error::Shape(format!(
                "bias shape {} does not match {} output channels",
                bias.shape(),
                d[0]
            )));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::Argument(format!("stride must be 1 or 2, got {stride}")));
        }
        Ok(ConvParams {
            weights,
            bias,
            stride,
            padding,
        })
    }

    /// Zero padding of `k/2` per side.
    pub fn same(weights: Tensor<T>, bias: Tensor<T>, stride: usize) -> Result<Self> {
        let pad = weights.dims().get(2).copied().unwrap_or(1) / 2;
        Self::new(weights, bias, stride, pad)
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.dims()[2]
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        conv_output_hw(h, w, self.kernel(), self.stride, self.padding)
    }
}

/// Spatial output extent of a convolution.
pub fn conv_output_hw(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<(usize, usize)> {
    let ph = h + 2 * pad;
    let pw = w + 2 * pad;
    if ph < k || pw < k {
        return Err(Error::Shape(format!(
            "padded input {ph}x{pw} smaller than kernel {k}x{k}"
        )));
    }
    Ok(((ph - k) / stride + 1, (pw - k) / stride + 1))
}

/// Output indices `o` in `0..out_len` whose input tap `o*stride + tap - pad`
/// lands inside `0..in_len`.
fn valid_range(out_len: usize, in_len: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
    let tap = tap as isize;
    let pad = pad as isize;
    let s = stride as isize;
    // o*s + tap - pad >= 0
    let lo_num = pad - tap;
    let lo = if lo_num <= 0 { 0 } else { (lo_num + s - 1) / s };
    // o*s + tap - pad <= in_len - 1
    let hi_num = in_len as isize - 1 + pad - tap;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num / s + 1).min(out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

fn input_dims<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<(usize, usize, usize, usize)> {
    if input.dims().len() != 4 {
        return Err(Error::Shape(format!("conv input must be N,C,H,W, got {}", input.shape())));
    }
    let (n, c, h, w) = input.shape().as_nchw();
    if c != params.in_channels() {
        return Err(Error::Shape(format!(
            "input has {c} channels, filters expect {}",
            params.in_channels()
        )));
    }
    Ok((n, c, h, w))
}

/// Unfolds one `C,H,W` item into a `(C*k*k) x (OH*OW)` patch matrix; row
/// `(c*k + m)*k + q` holds the input pixels under kernel tap `(m, q)`.
fn im2col<T: Scalar>(src: &[T], c_in: usize, h: usize, w: usize, geo: &Geometry) -> Vec<T> {
    let Geometry { k, s, pad, oh, ow } = *geo;
    let p = oh * ow;
    let mut cols = vec![T::zero(); c_in * k * k * p];
    for c in 0..c_in {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for m in 0..k {
            let (y0, y1) = valid_range(oh, h, m, s, pad);
            for q in 0..k {
                let (x0, x1) = valid_range(ow, w, q, s, pad);
                if x0 >= x1 {
                    continue;
                }
                let row = &mut cols[((c * k + m) * k + q) * p..((c * k + m) * k + q + 1) * p];
                for y in y0..y1 {
                    let irow = &plane[(y * s + m - pad) * w..(y * s + m - pad + 1) * w];
                    let orow = &mut row[y * ow..(y + 1) * ow];
                    if s == 1 {
                        orow[x0..x1].copy_from_slice(&irow[x0 + q - pad..x1 + q - pad]);
                    } else {
                        for xo in x0..x1 {
                            orow[xo] = irow[xo * s + q - pad];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the
/// input plane(s).
fn col2im<T: Scalar>(cols: &[T], dst: &mut [T], c_in: usize, h: usize, w: usize, geo: &Geometry) {
    let Geometry { k, s, pad, oh, ow } = *geo;
    let p = oh * ow;
    for c in 0..c_in {
        let plane = &mut dst[c * h * w..(c + 1) * h * w];
        for m in 0..k {
            let (y0, y1) = valid_range(oh, h, m, s, pad);
            for q in 0..k {
                let (x0, x1) = valid_range(ow, w, q, s, pad);
                if x0 >= x1 {
                    continue;
                }
                let row = &cols[((c * k + m) * k + q) * p..((c * k + m) * k + q + 1) * p];
                for y in y0..y1 {
                    let iy = y * s + m - pad;
                    let prow = &mut plane[iy * w..(iy + 1) * w];
                    let grow = &row[y * ow..(y + 1) * ow];
                    if s == 1 {
                        for (d, &g) in prow[x0 + q - pad..x1 + q - pad].iter_mut().zip(&grow[x0..x1]) {
                            *d += g;
                        }
                    } else {
                        for xo in x0..x1 {
                            prow[xo * s + q - pad] += grow[xo];
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    k: usize,
    s: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Forward convolution of an `N,C,H,W` batch.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let (n, c_in, h, w) = input_dims(input, params)?;
    let (oh, ow) = params.output_hw(h, w)?;
    let c_out = params.out_channels();
    let k = params.kernel();
    let geo = Geometry { k, s: params.stride, pad: params.padding, oh, ow };
    let kk = c_in * k * k;
    let p = oh * ow;
    let x = input.data();
    let wt = params.weights.data();
    let bias = params.bias.data();

    let cols: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|b| im2col(&x[b * c_in * h * w..(b + 1) * c_in * h * w], c_in, h, w, &geo))
        .collect();
    let mut out = vec![T::zero(); n * c_out * p];
    out.par_chunks_mut(p).enumerate().for_each(|(idx, plane)| {
        let (b, o) = (idx / c_out, idx % c_out);
        plane.fill(bias[o]);
        let cb = &cols[b];
        for (r, &wv) in wt[o * kk..(o + 1) * kk].iter().enumerate() {
            axpy(plane, wv, &cb[r * p..(r + 1) * p]);
        }
    });
    Tensor::from_vec(&[n, c_out, oh, ow], out)
}

/// Gradients of a convolution: `inputs[0]` w.r.t. the input batch,
/// `params = [weights, bias]`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<GradBundle<T>> {
    let (n, c_in, h, w) = input_dims(input, params)?;
    let (oh, ow) = params.output_hw(h, w)?;
    let c_out = params.out_channels();
    if grad_out.dims() != [n, c_out, oh, ow] {
        return Err(Error::Shape(format!(
            "upstream gradient {} does not match conv output ({n},{c_out},{oh},{ow})",
            grad_out.shape()
        )));
    }
    let k = params.kernel();
    let geo = Geometry { k, s: params.stride, pad: params.padding, oh, ow };
    let kk = c_in * k * k;
    let p = oh * ow;
    let x = input.data();
    let g = grad_out.data();
    let wt = params.weights.data();

    let grad_bias: Vec<T> = (0..c_out)
        .into_par_iter()
        .map(|o| {
            let mut acc = T::zero();
            for b in 0..n {
                let start = (b * c_out + o) * p;
                acc += g[start..start + p].iter().copied().sum::<T>();
            }
            acc
        })
        .collect();

    // Transposed patch matrices, `P x (C*k*k)` per item.
    let cols_t: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|b| {
            let cols = im2col(&x[b * c_in * h * w..(b + 1) * c_in * h * w], c_in, h, w, &geo);
            let mut t = vec![T::zero(); p * kk];
            for r in 0..kk {
                for (j, &v) in cols[r * p..(r + 1) * p].iter().enumerate() {
                    t[j * kk + r] = v;
                }
            }
            t
        })
        .collect();

    let mut grad_w = vec![T::zero(); c_out * kk];
    grad_w.par_chunks_mut(kk).enumerate().for_each(|(o, gw_o)| {
        for (b, ct) in cols_t.iter().enumerate() {
            let gplane = &g[(b * c_out + o) * p..(b * c_out + o + 1) * p];
            for (j, &gv) in gplane.iter().enumerate() {
                if gv != T::zero() {
                    axpy(gw_o, gv, &ct[j * kk..(j + 1) * kk]);
                }
            }
        }
    });

    let mut grad_x = vec![T::zero(); n * c_in * h * w];
    grad_x.par_chunks_mut(c_in * h * w).enumerate().for_each(|(b, gx)| {
        let mut gcols = vec![T::zero(); kk * p];
        for o in 0..c_out {
            let gplane = &g[(b * c_out + o) * p..(b * c_out + o + 1) * p];
            for (r, &wv) in wt[o * kk..(o + 1) * kk].iter().enumerate() {
                axpy(&mut gcols[r * p..(r + 1) * p], wv, gplane);
            }
        }
        col2im(&gcols, gx, c_in, h, w, &geo);
    });

    Ok(GradBundle {
        inputs: vec![Tensor::from_vec(&[n, c_in, h, w], grad_x)?],
        params: vec![
            Tensor::from_vec(params.weights.dims(), grad_w)?,
            Tensor::from_vec(&[c_out], grad_bias)?,
        ],
    })
}
