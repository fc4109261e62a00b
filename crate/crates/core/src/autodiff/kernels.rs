//! Forward and backward kernels on plain tensors.
//!
//! The tape records calls to these; the inference path calls them directly, so
//! both paths produce bitwise-identical values.

use rayon::prelude::*;

use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Output pixels gathered per im2col block; bounds the patch buffer size.
const PIXEL_BLOCK: usize = 2048;

/// Geometry of a same-resolution convolution, checked against its operands.
#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    in_ch: usize,
    out_ch: usize,
    k: usize,
    pad: usize,
    h: usize,
    w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_ch * self.k * self.k
    }
}

fn conv_geometry(
    input: Shape,
    weight: Shape,
    bias: Shape,
    padding: usize,
) -> Result<ConvGeometry> {
    let k = weight.height;
    if weight.width != k || k % 2 == 0 {
        return Err(Error::contract(format!(
            "conv2d: kernel must be square with odd size, got {}x{}",
            weight.height, weight.width
        )));
    }
    if weight.channels != input.channels {
        return Err(Error::contract(format!(
            "conv2d: input has {} channels but weight expects in_ch = {}",
            input.channels, weight.channels
        )));
    }
    if padding != (k - 1) / 2 {
        return Err(Error::contract(format!(
            "conv2d: padding {padding} does not preserve resolution for kernel {k} (need {})",
            (k - 1) / 2
        )));
    }
    if bias != Shape::new(1, weight.batch, 1, 1) {
        return Err(Error::contract(format!(
            "conv2d: bias shape {bias} does not match out_ch = {}",
            weight.batch
        )));
    }
    Ok(ConvGeometry {
        in_ch: input.channels,
        out_ch: weight.batch,
        k,
        pad: padding,
        h: input.height,
        w: input.width,
    })
}

/// Gathers kernel-sized patches for output pixels `start..start + len` of one
/// batch item into `cols`, laid out `(in_ch * k * k) x len`.
fn im2col<T: Scalar>(item: &[T], g: &ConvGeometry, start: usize, len: usize, cols: &mut [T]) {
    let plane = g.h * g.w;
    for c in 0..g.in_ch {
        let src = &item[c * plane..(c + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * len;
                let dst = &mut cols[row..row + len];
                let (mut y, mut x) = (start / g.w, start % g.w);
                for slot in dst.iter_mut() {
                    let sy = (y + ky) as isize - g.pad as isize;
                    let sx = (x + kx) as isize - g.pad as isize;
                    *slot = if sy >= 0 && sx >= 0 && (sy as usize) < g.h && (sx as usize) < g.w {
                        src[sy as usize * g.w + sx as usize]
                    } else {
                        T::zero()
                    };
                    x += 1;
                    if x == g.w {
                        x = 0;
                        y += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-adds patch gradients back onto one batch item; inverse of [`im2col`].
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, start: usize, len: usize, item: &mut [T]) {
    let plane = g.h * g.w;
    for c in 0..g.in_ch {
        let dst = &mut item[c * plane..(c + 1) * plane];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * len;
                let src = &cols[row..row + len];
                let (mut y, mut x) = (start / g.w, start % g.w);
                for &v in src {
                    let sy = (y + ky) as isize - g.pad as isize;
                    let sx = (x + kx) as isize - g.pad as isize;
                    if sy >= 0 && sx >= 0 && (sy as usize) < g.h && (sx as usize) < g.w {
                        dst[sy as usize * g.w + sx as usize] += v;
                    }
                    x += 1;
                    if x == g.w {
                        x = 0;
                        y += 1;
                    }
                }
            }
        }
    }
}

fn pixel_blocks(plane: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..plane)
        .step_by(PIXEL_BLOCK)
        .map(move |start| (start, PIXEL_BLOCK.min(plane - start)))
}

/// Zero-padded, stride-1, same-resolution 2-D convolution.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
) -> Result<Tensor<T>> {
    let s = input.shape();
    let g = conv_geometry(s, weight.shape(), bias.shape(), padding)?;
    let plane = g.h * g.w;
    let out_shape = Shape::new(s.batch, g.out_ch, g.h, g.w);
    let mut out = Tensor::zeros(out_shape);
    let kdim = g.patch_len();
    let wdata = weight.data();
    let bdata = bias.data();

    out.data_mut()
        .par_chunks_mut(out_shape.item().max(1))
        .zip(input.data().par_chunks(s.item().max(1)))
        .for_each(|(out_item, in_item)| {
            let mut cols = vec![T::zero(); kdim * PIXEL_BLOCK.min(plane)];
            for (start, len) in pixel_blocks(plane) {
                let cols = &mut cols[..kdim * len];
                im2col(in_item, &g, start, len, cols);
                T::gemm(
                    g.out_ch,
                    kdim,
                    len,
                    T::one(),
                    wdata,
                    (kdim, 1),
                    cols,
                    (len, 1),
                    T::zero(),
                    &mut out_item[start..],
                    (plane, 1),
                );
            }
            for (o, &b) in out_item.chunks_mut(plane).zip(bdata) {
                o.iter_mut().for_each(|v| *v += b);
            }
        });
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to whichever operands are requested.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: usize,
    want: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let s = input.shape();
    let wshape = weight.shape();
    let g = conv_geometry(s, wshape, Shape::new(1, wshape.batch, 1, 1), padding)?;
    let (want_input, want_weight, want_bias) = want;
    let plane = g.h * g.w;
    let kdim = g.patch_len();
    let wdata = weight.data();
    let out_item_len = g.out_ch * plane;

    // Per-item partial results, reduced afterwards in batch order so the sum
    // does not depend on scheduling.
    let partials: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = input
        .data()
        .par_chunks(s.item().max(1))
        .zip(grad_out.data().par_chunks(out_item_len.max(1)))
        .map(|(in_item, gout)| {
            let mut gx = want_input.then(|| vec![T::zero(); s.item()]);
            let mut gw = want_weight.then(|| vec![T::zero(); wshape.numel()]);
            let mut cols = vec![T::zero(); kdim * PIXEL_BLOCK.min(plane)];
            let mut dcols = vec![T::zero(); if want_input { kdim * PIXEL_BLOCK.min(plane) } else { 0 }];
            for (start, len) in pixel_blocks(plane) {
                let gout_block = &gout[start..];
                if let Some(gw) = gw.as_mut() {
                    let cols = &mut cols[..kdim * len];
                    im2col(in_item, &g, start, len, cols);
                    T::gemm(
                        g.out_ch,
                        len,
                        kdim,
                        T::one(),
                        gout_block,
                        (plane, 1),
                        cols,
                        (1, len),
                        T::one(),
                        gw,
                        (kdim, 1),
                    );
                }
                if let Some(gx) = gx.as_mut() {
                    let dcols = &mut dcols[..kdim * len];
                    T::gemm(
                        kdim,
                        g.out_ch,
                        len,
                        T::one(),
                        wdata,
                        (1, kdim),
                        gout_block,
                        (plane, 1),
                        T::zero(),
                        dcols,
                        (len, 1),
                    );
                    col2im(dcols, &g, start, len, gx);
                }
            }
            (gx, gw)
        })
        .collect();

    let input_grad = if want_input {
        let mut data = Vec::with_capacity(s.numel());
        for (gx, _) in &partials {
            data.extend_from_slice(gx.as_deref().unwrap_or_default());
        }
        Some(Tensor::from_vec(s, data)?)
    } else {
        None
    };
    let weight_grad = if want_weight {
        let mut acc = Tensor::zeros(wshape);
        for (_, gw) in &partials {
            if let Some(gw) = gw {
                acc.data_mut().iter_mut().zip(gw).for_each(|(a, &b)| *a += b);
            }
        }
        Some(acc)
    } else {
        None
    };
    let bias_grad = want_bias.then(|| {
        let mut acc = Tensor::zeros(Shape::new(1, g.out_ch, 1, 1));
        for gout in grad_out.data().chunks(out_item_len.max(1)) {
            for (a, plane_grad) in acc.data_mut().iter_mut().zip(gout.chunks(plane.max(1))) {
                *a += plane_grad.iter().copied().sum::<T>();
            }
        }
        acc
    });
    Ok(ConvGrads {
        input: input_grad,
        weight: weight_grad,
        bias: bias_grad,
    })
}

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "{op}: shape mismatch {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    Tensor::from_vec(input.shape(), data).expect("same length")
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("same length")
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn scale<T: Scalar>(a: &Tensor<T>, s: T) -> Tensor<T> {
    let data = a.data().iter().map(|&x| x * s).collect();
    Tensor::from_vec(a.shape(), data).expect("same length")
}

/// `y + a * x`, evaluated with the same rounding as `add(y, scale(x, a))`.
pub fn axpy<T: Scalar>(y: &Tensor<T>, a: T, x: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("axpy", y, x)?;
    let data = y.data().iter().zip(x.data()).map(|(&yv, &xv)| yv + xv * a).collect();
    Tensor::from_vec(y.shape(), data)
}

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.batch != sb.batch || sa.height != sb.height || sa.width != sb.width {
        return Err(Error::contract(format!(
            "concat_channels: batch/spatial mismatch {sa} vs {sb}"
        )));
    }
    let out = Shape::new(sa.batch, sa.channels + sb.channels, sa.height, sa.width);
    let mut data = Vec::with_capacity(out.numel());
    for bi in 0..sa.batch {
        data.extend_from_slice(&a.data()[bi * sa.item()..(bi + 1) * sa.item()]);
        data.extend_from_slice(&b.data()[bi * sb.item()..(bi + 1) * sb.item()]);
    }
    Tensor::from_vec(out, data)
}

/// Splits a channel-concatenated gradient back into its two operands' shapes.
pub fn split_channels<T: Scalar>(
    grad: &Tensor<T>,
    first: Shape,
    second: Shape,
) -> (Tensor<T>, Tensor<T>) {
    let mut ga = Vec::with_capacity(first.numel());
    let mut gb = Vec::with_capacity(second.numel());
    let item = grad.shape().item();
    for chunk in grad.data().chunks(item.max(1)) {
        ga.extend_from_slice(&chunk[..first.item()]);
        gb.extend_from_slice(&chunk[first.item()..]);
    }
    (
        Tensor::from_vec(first, ga).expect("split sizes"),
        Tensor::from_vec(second, gb).expect("split sizes"),
    )
}

/// One-channel plane per batch item with every element equal to `value`.
pub fn fill_channel<T: Scalar>(like: Shape, value: T) -> Tensor<T> {
    Tensor::full(Shape::new(like.batch, 1, like.height, like.width), value)
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("l1_loss", pred, target)?;
    let n = pred.len().max(1);
    // Accumulate in f64 so the loss value does not drift with tensor size.
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t).abs().to_f64_lossy())
        .sum();
    Ok(Tensor::scalar(T::of(sum / n as f64)))
}

pub fn l1_loss_backward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, upstream: T) -> Tensor<T> {
    let scale = upstream / T::of(pred.len().max(1) as f64);
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            if d > T::zero() {
                scale
            } else if d < T::zero() {
                -scale
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(pred.shape(), data).expect("same length")
}
