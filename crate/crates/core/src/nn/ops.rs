//! Forward and backward kernels for the tensor primitives.
//!
//! Every kernel walks a fixed loop nest with a fixed summation order, so two
//! calls on identical inputs are bit-identical regardless of how callers
//! schedule them across threads.

use super::{Real, Shape, Tensor};
use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvSpec { stride, padding, groups }
    }
}

/// Output spatial size of a sliding window, or a configuration error when the
/// window does not fit.
pub fn window_out(len: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(config_err!("stride must be >= 1"));
    }
    if len + 2 * padding < k {
        return Err(config_err!(
            "window {k} larger than padded input {} (len {len}, padding {padding})",
            len + 2 * padding
        ));
    }
    Ok((len + 2 * padding - k) / stride + 1)
}

/// Range of output columns `o` for which `o*stride + offset - padding` lands in `[0, len)`.
#[inline]
fn valid_range(out_len: usize, len: usize, stride: usize, offset: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > offset { (padding - offset).div_ceil(stride) } else { 0 };
    // largest o with o*stride + offset - padding <= len - 1
    let top = len - 1 + padding;
    let hi = if top < offset { 0 } else { ((top - offset) / stride + 1).min(out_len) };
    (lo, hi.max(lo))
}

pub fn conv2d_shape(input: Shape, weight: Shape, spec: ConvSpec) -> Result<Shape> {
    let (c_out, c_in_g, kh, kw) = (weight.n(), weight.c(), weight.h(), weight.w());
    if kh != kw {
        return Err(config_err!("conv2d expects square kernels, got {weight}"));
    }
    if spec.groups == 0 || input.c() % spec.groups != 0 || c_out % spec.groups != 0 {
        return Err(config_err!(
            "conv2d groups {} must divide input channels {} and output channels {c_out}",
            spec.groups,
            input.c()
        ));
    }
    if input.c() / spec.groups != c_in_g {
        return Err(config_err!(
            "conv2d weight {weight} expects {} input channels per group, input {input} with groups {} gives {}",
            c_in_g,
            spec.groups,
            input.c() / spec.groups
        ));
    }
    let oh = window_out(input.h(), kh, spec.stride, spec.padding)?;
    let ow = window_out(input.w(), kw, spec.stride, spec.padding)?;
    Ok(Shape::new(input.n(), c_out, oh, ow))
}

/// 2-D cross-correlation with optional bias, stride, zero padding and channel groups.
pub fn conv2d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: ConvSpec) -> Result<Tensor<T>> {
    let ishape = input.shape();
    let wshape = weight.shape();
    let oshape = conv2d_shape(ishape, wshape, spec)?;
    if let Some(b) = bias {
        if b.numel() != wshape.n() {
            return Err(config_err!("conv2d bias has {} entries, expected {}", b.numel(), wshape.n()));
        }
    }
    let (c_out, c_in_g, k) = (wshape.n(), wshape.c(), wshape.h());
    let c_out_g = c_out / spec.groups;
    let plane = oshape.h() * oshape.w();
    let rows = c_in_g * k * k;
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![T::zero(); oshape.numel()];
    let mut cols = vec![T::zero(); rows * plane];

    for n in 0..ishape.n() {
        for g in 0..spec.groups {
            im2col(x, ishape, n, g * c_in_g, c_in_g, k, spec, oshape, &mut cols);
            let co0 = g * c_out_g;
            let outs = &mut out[(n * c_out + co0) * plane..][..c_out_g * plane];
            if let Some(b) = bias {
                for (j, orow) in outs.chunks_mut(plane).enumerate() {
                    orow.fill(b.data()[co0 + j]);
                }
            }
            // four output channels per pass share each loaded column row
            for (blk, oblock) in outs.chunks_mut(4 * plane).enumerate() {
                let co = co0 + blk * 4;
                let nb = oblock.len() / plane;
                let wrows: Vec<&[T]> = (0..nb).map(|j| &wt[(co + j) * rows..][..rows]).collect();
                if nb == 4 {
                    let (o0, rest) = oblock.split_at_mut(plane);
                    let (o1, rest) = rest.split_at_mut(plane);
                    let (o2, o3) = rest.split_at_mut(plane);
                    for r in 0..rows {
                        let c = &cols[r * plane..][..plane];
                        let (w0, w1, w2, w3) = (wrows[0][r], wrows[1][r], wrows[2][r], wrows[3][r]);
                        for j in 0..plane {
                            let cj = c[j];
                            o0[j] = o0[j] + w0 * cj;
                            o1[j] = o1[j] + w1 * cj;
                            o2[j] = o2[j] + w2 * cj;
                            o3[j] = o3[j] + w3 * cj;
                        }
                    }
                } else {
                    for (j, orow) in oblock.chunks_mut(plane).enumerate() {
                        for r in 0..rows {
                            axpy(orow, wrows[j][r], &cols[r * plane..][..plane]);
                        }
                    }
                }
            }
        }
    }
    let out = Tensor::from_vec(oshape, out)?;
    out.check_finite("conv2d output")?;
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: ConvSpec,
    need_input_grad: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let ishape = input.shape();
    let wshape = weight.shape();
    let oshape = grad_out.shape();
    let (c_out, c_in_g, k) = (wshape.n(), wshape.c(), wshape.h());
    let c_out_g = c_out / spec.groups;
    let plane = oshape.h() * oshape.w();
    let rows = c_in_g * k * k;
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();

    let mut gx = if need_input_grad { Some(vec![T::zero(); ishape.numel()]) } else { None };
    let mut gw = vec![T::zero(); wshape.numel()];
    let mut gb = vec![T::zero(); c_out];
    let mut cols = vec![T::zero(); rows * plane];
    let mut gcols = vec![T::zero(); rows * plane];

    for n in 0..ishape.n() {
        for g in 0..spec.groups {
            im2col(x, ishape, n, g * c_in_g, c_in_g, k, spec, oshape, &mut cols);
            if gx.is_some() {
                gcols.fill(T::zero());
            }
            for co in g * c_out_g..(g + 1) * c_out_g {
                let grow = &go[(n * c_out + co) * plane..][..plane];
                gb[co] = gb[co] + grow.iter().copied().sum::<T>();
                let wrow = &wt[co * rows..][..rows];
                let gwrow = &mut gw[co * rows..][..rows];
                for r in 0..rows {
                    let c = &cols[r * plane..][..plane];
                    gwrow[r] = gwrow[r] + dot(grow, c);
                    if gx.is_some() {
                        axpy(&mut gcols[r * plane..][..plane], wrow[r], grow);
                    }
                }
            }
            if let Some(gx) = gx.as_mut() {
                col2im(&gcols, gx, ishape, n, g * c_in_g, c_in_g, k, spec, oshape);
            }
        }
    }
    (gx, gw, gb)
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}

/// Dot product with eight interleaved partial sums combined in a fixed order.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] = lanes[l] + x[l] * y[l];
        }
    }
    let mut acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for (x, y) in ra.iter().zip(rb) {
        acc = acc + *x * *y;
    }
    acc
}

/// Unfolds `cin` channels starting at `c0` of image `n` into a
/// `(cin*k*k) x (oh*ow)` matrix; padded taps are zero.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(x: &[T], ishape: Shape, n: usize, c0: usize, cin: usize, k: usize, spec: ConvSpec, oshape: Shape, cols: &mut [T]) {
    let (h, w, oh, ow) = (ishape.h(), ishape.w(), oshape.h(), oshape.w());
    let (s, p) = (spec.stride, spec.padding);
    let plane = oh * ow;
    for ci in 0..cin {
        let iplane = &x[(n * ishape.c() + c0 + ci) * h * w..][..h * w];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(oh, h, s, ky, p);
            for kx in 0..k {
                let (ox_lo, ox_hi) = valid_range(ow, w, s, kx, p);
                let row = &mut cols[((ci * k + ky) * k + kx) * plane..][..plane];
                row.fill(T::zero());
                for oy in oy_lo..oy_hi {
                    let irow = &iplane[(oy * s + ky - p) * w..][..w];
                    let orow = &mut row[oy * ow..][..ow];
                    if s == 1 {
                        let ix0 = ox_lo + kx - p;
                        orow[ox_lo..ox_hi].copy_from_slice(&irow[ix0..ix0 + ox_hi - ox_lo]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            orow[ox] = irow[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds the column matrix back into `gx`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(cols: &[T], gx: &mut [T], ishape: Shape, n: usize, c0: usize, cin: usize, k: usize, spec: ConvSpec, oshape: Shape) {
    let (h, w, oh, ow) = (ishape.h(), ishape.w(), oshape.h(), oshape.w());
    let (s, p) = (spec.stride, spec.padding);
    let plane = oh * ow;
    for ci in 0..cin {
        let gplane = &mut gx[(n * ishape.c() + c0 + ci) * h * w..][..h * w];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(oh, h, s, ky, p);
            for kx in 0..k {
                let (ox_lo, ox_hi) = valid_range(ow, w, s, kx, p);
                let row = &cols[((ci * k + ky) * k + kx) * plane..][..plane];
                for oy in oy_lo..oy_hi {
                    let grow = &mut gplane[(oy * s + ky - p) * w..][..w];
                    let crow = &row[oy * ow..][..ow];
                    for ox in ox_lo..ox_hi {
                        let ix = ox * s + kx - p;
                        grow[ix] = grow[ix] + crow[ox];
                    }
                }
            }
        }
    }
}

/// Max- or average-pooling without padding. Returns the argmax flat input index
/// of every output element for max pooling (empty for average pooling).
pub fn pool2d<T: Real>(input: &Tensor<T>, kind: PoolKind, k: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let ishape = input.shape();
    if k == 0 {
        return Err(config_err!("pool window must be >= 1"));
    }
    if ishape.h() < k || ishape.w() < k {
        return Err(config_err!("pool window {k} larger than input {ishape}"));
    }
    let oh = window_out(ishape.h(), k, stride, 0)?;
    let ow = window_out(ishape.w(), k, stride, 0)?;
    let oshape = Shape::new(ishape.n(), ishape.c(), oh, ow);
    let (h, w) = (ishape.h(), ishape.w());
    let x = input.data();
    let mut out = Vec::with_capacity(oshape.numel());
    let mut argmax = Vec::new();
    let inv = T::one() / T::lit((k * k) as f64);
    for plane in 0..ishape.n() * ishape.c() {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                match kind {
                    PoolKind::Max => {
                        let mut best = base + oy * stride * w + ox * stride;
                        for ky in 0..k {
                            for kx in 0..k {
                                let i = base + (oy * stride + ky) * w + ox * stride + kx;
                                if x[i] > x[best] {
                                    best = i;
                                }
                            }
                        }
                        out.push(x[best]);
                        argmax.push(best);
                    }
                    PoolKind::Avg => {
                        let mut acc = T::zero();
                        for ky in 0..k {
                            for kx in 0..k {
                                acc = acc + x[base + (oy * stride + ky) * w + ox * stride + kx];
                            }
                        }
                        out.push(acc * inv);
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(oshape, out)?, argmax))
}

pub fn pool2d_backward<T: Real>(
    ishape: Shape,
    grad_out: &Tensor<T>,
    kind: PoolKind,
    k: usize,
    stride: usize,
    argmax: &[usize],
) -> Vec<T> {
    let mut gx = vec![T::zero(); ishape.numel()];
    let go = grad_out.data();
    match kind {
        PoolKind::Max => {
            for (g, &i) in go.iter().zip(argmax) {
                gx[i] = gx[i] + *g;
            }
        }
        PoolKind::Avg => {
            let (h, w) = (ishape.h(), ishape.w());
            let (oh, ow) = (grad_out.shape().h(), grad_out.shape().w());
            let inv = T::one() / T::lit((k * k) as f64);
            for plane in 0..ishape.n() * ishape.c() {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = go[(plane * oh + oy) * ow + ox] * inv;
                        for ky in 0..k {
                            for kx in 0..k {
                                let i = plane * h * w + (oy * stride + ky) * w + ox * stride + kx;
                                gx[i] = gx[i] + g;
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<T: Real>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor < 1 {
        return Err(config_err!("upsample factor must be >= 1, got {factor}"));
    }
    let s = input.shape();
    let oshape = Shape::new(s.n(), s.c(), s.h() * factor, s.w() * factor);
    if factor == 1 {
        return Tensor::from_vec(oshape, input.data().to_vec());
    }
    let (h, w, ow) = (s.h(), s.w(), oshape.w());
    let x = input.data();
    let mut out = vec![T::zero(); oshape.numel()];
    for plane in 0..s.n() * s.c() {
        let ip = &x[plane * h * w..][..h * w];
        let op = &mut out[plane * oshape.plane()..][..oshape.plane()];
        for oy in 0..oshape.h() {
            let irow = &ip[(oy / factor) * w..][..w];
            for (ox, o) in op[oy * ow..][..ow].iter_mut().enumerate() {
                *o = irow[ox / factor];
            }
        }
    }
    Tensor::from_vec(oshape, out)
}

pub fn upsample_nearest_backward<T: Real>(ishape: Shape, grad_out: &Tensor<T>, factor: usize) -> Vec<T> {
    let (h, w) = (ishape.h(), ishape.w());
    let (oh, ow) = (h * factor, w * factor);
    let go = grad_out.data();
    let mut gx = vec![T::zero(); ishape.numel()];
    for plane in 0..ishape.n() * ishape.c() {
        for oy in 0..oh {
            for ox in 0..ow {
                let i = plane * h * w + (oy / factor) * w + ox / factor;
                gx[i] = gx[i] + go[(plane * oh + oy) * ow + ox];
            }
        }
    }
    gx
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    // split by sign so exp never overflows
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn activation<T: Real>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => input.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

/// Gradient of an activation given its *output*.
pub fn activation_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>, kind: Activation) -> Vec<T> {
    let y = output.data();
    let g = grad_out.data();
    match kind {
        Activation::Relu => y.iter().zip(g).map(|(&y, &g)| if y > T::zero() { g } else { T::zero() }).collect(),
        Activation::Sigmoid => y.iter().zip(g).map(|(&y, &g)| g * y * (T::one() - y)).collect(),
    }
}

/// `x * scale[c] + shift[c]` per channel.
pub fn channel_affine<T: Real>(input: &Tensor<T>, scale: &Tensor<T>, shift: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if scale.numel() != s.c() || shift.numel() != s.c() {
        return Err(config_err!(
            "channel affine expects {} scale/shift entries, got {}/{}",
            s.c(),
            scale.numel(),
            shift.numel()
        ));
    }
    let plane = s.plane();
    let mut out = input.data().to_vec();
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let c = i % s.c();
        let (a, b) = (scale.data()[c], shift.data()[c]);
        for v in chunk {
            *v = *v * a + b;
        }
    }
    Tensor::from_vec(s, out)
}

/// Multiplies each `(n, c)` plane of `input` by the matching entry of an `n x c x 1 x 1` gate.
pub fn scale_channels<T: Real>(input: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    let gs = gate.shape();
    if gs != Shape::new(s.n(), s.c(), 1, 1) {
        return Err(config_err!("channel gate {gs} does not broadcast over {s}"));
    }
    let plane = s.plane();
    let mut out = input.data().to_vec();
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let g = gate.data()[i];
        for v in chunk {
            *v = *v * g;
        }
    }
    Tensor::from_vec(s, out)
}

pub fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(config_err!("{what}: shape mismatch {} vs {}", a.shape(), b.shape()));
    }
    Ok(())
}
