//! Layer primitives: 3x3 same-padding convolution, 2x2 max-pool, dense,
//! ReLU and sigmoid, each with forward and backward passes.
//!
//! Convolution lowers to im2col + gemm. Batch items are processed in
//! parallel; every reduction inside a task runs in a fixed order, so results
//! are bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

pub const KERNEL: usize = 3;

/// Fill the im2col buffer for one item: `cols[(c*9 + kh*3 + kw), (y*w + x)]`
/// holds the zero-padded input value at `(c, y+kh-1, x+kw-1)`.
/// `cols` must be zeroed and sized `c*9 * h*w`.
fn im2col<T: Scalar>(item: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let p = h * w;
    for ch in 0..c {
        let plane = &item[ch * p..(ch + 1) * p];
        for kh in 0..KERNEL {
            for kw in 0..KERNEL {
                let row = (ch * KERNEL + kh) * KERNEL + kw;
                let dst_all = &mut cols[row * p..(row + 1) * p];
                for y in 0..h {
                    let iy = y as isize + kh as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue; // padding row, already zero
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut dst_all[y * w..(y + 1) * w];
                    match kw {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
}

/// Scatter-add the im2col-shaped gradient back onto an input item.
fn col2im_add<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, item: &mut [T]) {
    let p = h * w;
    for ch in 0..c {
        let plane = &mut item[ch * p..(ch + 1) * p];
        for kh in 0..KERNEL {
            for kw in 0..KERNEL {
                let row = (ch * KERNEL + kh) * KERNEL + kw;
                let src_all = &cols[row * p..(row + 1) * p];
                for y in 0..h {
                    let iy = y as isize + kh as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &src_all[y * w..(y + 1) * w];
                    match kw {
                        0 => {
                            for x in 1..w {
                                dst[x - 1] = dst[x - 1] + src[x];
                            }
                        }
                        1 => {
                            for x in 0..w {
                                dst[x] = dst[x] + src[x];
                            }
                        }
                        _ => {
                            for x in 0..w - 1 {
                                dst[x + 1] = dst[x + 1] + src[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_shapes<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let [n, c, h, w] = input.shape();
    let [oc, kc, kh, kw] = kernels.shape();
    if kh != KERNEL || kw != KERNEL {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: kernels.shape().to_vec(),
        });
    }
    if kc != c {
        return Err(Error::ChannelMismatch {
            input: c,
            kernels: kc,
        });
    }
    if bias.len() != oc {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            lhs: vec![oc],
            rhs: bias.shape().to_vec(),
        });
    }
    Ok((n, c, h, w, oc))
}

/// 3x3 convolution, stride 1, same padding with zero fill.
/// Output spatial size equals input spatial size.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w, oc) = check_conv_shapes(input, kernels, bias)?;
    let p = h * w;
    let k = c * KERNEL * KERNEL;
    let mut out = Tensor::zeros([n, oc, h, w]);
    let in_items: Vec<&[T]> = input.data().chunks(c * p).collect();
    out.data_mut()
        .par_chunks_mut(oc * p)
        .zip(in_items)
        .for_each(|(out_item, in_item)| {
            let mut cols = vec![T::zero(); k * p];
            im2col(in_item, c, h, w, &mut cols);
            gemm(kernels.data(), &cols, out_item, oc, k, p);
            for ch in 0..oc {
                let b = bias.data()[ch];
                for v in &mut out_item[ch * p..(ch + 1) * p] {
                    *v = *v + b;
                }
            }
        });
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, kernels and bias.
/// `grad_bias[k]` is the sum of `grad_out` over channel `k`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let dummy_bias = Tensor::zeros([kernels.shape()[0], 1, 1, 1]);
    let (n, c, h, w, oc) = check_conv_shapes(input, kernels, &dummy_bias)?;
    if grad_out.shape() != [n, oc, h, w] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            lhs: vec![n, oc, h, w],
            rhs: grad_out.shape().to_vec(),
        });
    }
    let p = h * w;
    let k = c * KERNEL * KERNEL;

    let mut grad_input = Tensor::zeros([n, c, h, w]);
    let in_items: Vec<&[T]> = input.data().chunks(c * p).collect();
    let gout_items: Vec<&[T]> = grad_out.data().chunks(oc * p).collect();

    // Per-item kernel/bias gradients are folded in item order afterwards so
    // the reduction is independent of the parallel schedule.
    let per_item: Vec<(Vec<T>, Vec<T>)> = grad_input
        .data_mut()
        .par_chunks_mut(c * p)
        .zip(in_items)
        .zip(gout_items)
        .map(|((gin_item, in_item), gout_item)| {
            let mut cols = vec![T::zero(); k * p];
            im2col(in_item, c, h, w, &mut cols);

            let mut dw = vec![T::zero(); oc * k];
            gemm_nt(gout_item, &cols, &mut dw, oc, p, k);

            let mut db = vec![T::zero(); oc];
            for ch in 0..oc {
                let mut acc = T::zero();
                for &g in &gout_item[ch * p..(ch + 1) * p] {
                    acc = acc + g;
                }
                db[ch] = acc;
            }

            let mut dcols = vec![T::zero(); k * p];
            gemm_tn(kernels.data(), gout_item, &mut dcols, k, oc, p);
            col2im_add(&dcols, c, h, w, gin_item);

            (dw, db)
        })
        .collect();

    let mut grad_kernels = Tensor::zeros(kernels.shape());
    let mut grad_bias = Tensor::zeros([oc, 1, 1, 1]);
    for (dw, db) in &per_item {
        let gk = grad_kernels.data_mut();
        for (dst, &src) in gk.iter_mut().zip(dw) {
            *dst = *dst + src;
        }
        let gb = grad_bias.data_mut();
        for (dst, &src) in gb.iter_mut().zip(db) {
            *dst = *dst + src;
        }
    }
    Ok((grad_input, grad_kernels, grad_bias))
}

/// 2x2 max-pool, stride 2. Returns the pooled tensor and the flat input
/// index of each window maximum (ties broken by lowest flat index).
pub fn maxpool2x2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddSpatialExtent { h, w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let data = input.data();
    let mut oi = 0;
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for y in 0..oh {
                for x in 0..ow {
                    let i00 = base + (2 * y) * w + 2 * x;
                    let candidates = [i00, i00 + 1, i00 + w, i00 + w + 1];
                    let mut best = candidates[0];
                    let mut best_v = data[best];
                    for &idx in &candidates[1..] {
                        if data[idx] > best_v {
                            best = idx;
                            best_v = data[idx];
                        }
                    }
                    out.data_mut()[oi] = best_v;
                    argmax[oi] = best;
                    oi += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Route each output gradient back to its stored argmax position.
pub fn maxpool2x2_backward<T: Scalar>(
    input_shape: [usize; 4],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    debug_assert_eq!(argmax.len(), grad_out.len());
    let mut grad_input = Tensor::zeros(input_shape);
    let gi = grad_input.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gi[idx] = gi[idx] + g;
    }
    grad_input
}

/// Fully connected layer: `y = x W^T + b` with `x` shaped `(n, in, 1, 1)`
/// and `weights` shaped `(out, in, 1, 1)`.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, f, ih, iw] = input.shape();
    let [o, wf, _, _] = weights.shape();
    if ih != 1 || iw != 1 || wf != f || bias.len() != o {
        return Err(Error::ShapeMismatch {
            op: "dense",
            lhs: input.shape().to_vec(),
            rhs: weights.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros([n, o, 1, 1]);
    gemm_nt(input.data(), weights.data(), out.data_mut(), n, f, o);
    let od = out.data_mut();
    for ni in 0..n {
        for oi in 0..o {
            od[ni * o + oi] = od[ni * o + oi] + bias.data()[oi];
        }
    }
    Ok(out)
}

/// Gradients of [`dense_forward`].
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, f, _, _] = input.shape();
    let [o, _, _, _] = weights.shape();
    if grad_out.shape() != [n, o, 1, 1] {
        return Err(Error::ShapeMismatch {
            op: "dense_backward",
            lhs: vec![n, o, 1, 1],
            rhs: grad_out.shape().to_vec(),
        });
    }
    let mut grad_input = Tensor::zeros([n, f, 1, 1]);
    gemm(
        grad_out.data(),
        weights.data(),
        grad_input.data_mut(),
        n,
        o,
        f,
    );

    let mut grad_weights = Tensor::zeros(weights.shape());
    gemm_tn(
        grad_out.data(),
        input.data(),
        grad_weights.data_mut(),
        o,
        n,
        f,
    );

    let mut grad_bias = Tensor::zeros([o, 1, 1, 1]);
    let gb = grad_bias.data_mut();
    for row in grad_out.data().chunks_exact(o) {
        for (g, &v) in gb.iter_mut().zip(row) {
            *g = *g + v;
        }
    }
    Ok((grad_input, grad_weights, grad_bias))
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient passes iff the pre-activation is strictly positive; the
/// derivative at exactly zero is defined as zero.
pub fn relu_backward<T: Scalar>(pre_activation: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(pre_activation.shape(), grad_out.shape());
    let mut out = Tensor::zeros(grad_out.shape());
    for ((dst, &x), &g) in out
        .data_mut()
        .iter_mut()
        .zip(pre_activation.data())
        .zip(grad_out.data())
    {
        if x > T::zero() {
            *dst = g;
        }
    }
    out
}

/// Numerically stable sigmoid: separate branches for positive and negative
/// logits so neither branch exponentiates a large positive value.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// Backward through sigmoid given the cached forward *output*.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(output.shape(), grad_out.shape());
    let mut out = Tensor::zeros(grad_out.shape());
    for ((dst, &s), &g) in out
        .data_mut()
        .iter_mut()
        .zip(output.data())
        .zip(grad_out.data())
    {
        *dst = g * s * (T::one() - s);
    }
    out
}
