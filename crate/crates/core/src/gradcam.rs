//! Gradient-weighted class activation mapping over the last convolutional
//! layer, heatmap normalization, and overlay rendering.
//!
//! The map is built from the gradient of the pre-sigmoid logit (not the
//! probability, which vanishes at confident predictions) with respect to
//! the last conv layer's activation maps: per-channel weights are the
//! spatial means of that gradient, the weighted activation sum is rectified,
//! bilinearly upsampled to input resolution, and normalized by its maximum.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Explanation target. The binary head has a single logit, so the
/// uninfected class is explained through the negated logit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Parasitized,
    Uninfected,
}

/// Class-discriminative relevance map at input resolution, values in
/// `[0, 1]`. An all-zero map (no positive evidence anywhere) is valid and
/// flagged as degenerate.
#[derive(Clone, Debug)]
pub struct Heatmap<T> {
    pub values: Vec<T>,
    pub width: usize,
    pub height: usize,
    /// Index of the last convolutional layer the map was taken from.
    pub source_layer: usize,
    pub degenerate: bool,
}

impl<T: Scalar> Heatmap<T> {
    pub fn at(&self, y: usize, x: usize) -> T {
        self.values[y * self.width + x]
    }

    /// Location of the maximum value, as `(y, x)`.
    pub fn peak(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// Intermediate Grad-CAM artifacts, used by oracle tests and debugging.
#[derive(Clone, Debug)]
pub struct GradCamDetail<T> {
    pub heatmap: Heatmap<T>,
    /// Rectified weighted activation sum at conv resolution, before
    /// upsampling and normalization.
    pub raw: Vec<T>,
    pub raw_height: usize,
    pub raw_width: usize,
    /// Per-channel weights: spatial means of the logit gradient.
    pub channel_weights: Vec<T>,
}

/// Grad-CAM for the positive (parasitized) class.
pub fn gradcam<T: Scalar>(model: &Model<T>, image: &Tensor<T>) -> Result<Heatmap<T>> {
    Ok(gradcam_detailed(model, image, Target::Parasitized)?.heatmap)
}

/// Grad-CAM with an explicit class target.
pub fn gradcam_for_class<T: Scalar>(
    model: &Model<T>,
    image: &Tensor<T>,
    target: Target,
) -> Result<Heatmap<T>> {
    Ok(gradcam_detailed(model, image, target)?.heatmap)
}

/// Full Grad-CAM computation, exposing pre-normalization intermediates.
pub fn gradcam_detailed<T: Scalar>(
    model: &Model<T>,
    image: &Tensor<T>,
    target: Target,
) -> Result<GradCamDetail<T>> {
    let conv_idx = model.spec().last_conv_index().ok_or(Error::NoConvLayer)?;
    let (_, in_h, in_w) = model.spec().input_shape;

    let (_, cache) = model.forward(image)?;
    // A^k: activation maps emitted by the last conv layer.
    let activations = &cache.activations[conv_idx + 1];
    let [_, channels, ah, aw] = activations.shape();

    let mut grad = model.logit_gradient_at(&cache, conv_idx)?;
    if target == Target::Uninfected {
        grad = grad.map(|v| -v);
    }

    // alpha_k: spatial mean of the gradient per channel.
    let plane = ah * aw;
    let inv_plane = T::from_f64(1.0 / plane as f64);
    let mut channel_weights = Vec::with_capacity(channels);
    for k in 0..channels {
        let mut acc = T::zero();
        for &g in &grad.data()[k * plane..(k + 1) * plane] {
            acc = acc + g;
        }
        channel_weights.push(acc * inv_plane);
    }

    // ReLU(sum_k alpha_k A^k) at conv resolution.
    let mut raw = vec![T::zero(); plane];
    for (&alpha, a) in channel_weights
        .iter()
        .zip(activations.data().chunks_exact(plane))
    {
        for (dst, &v) in raw.iter_mut().zip(a) {
            *dst = *dst + alpha * v;
        }
    }
    for v in &mut raw {
        if *v < T::zero() {
            *v = T::zero();
        }
    }

    // Upsample to input resolution, then normalize by the maximum.
    let mut values = upsample_bilinear(&raw, aw, ah, in_w, in_h);
    let max = values.iter().cloned().fold(T::zero(), T::max);
    let degenerate = max == T::zero();
    if !degenerate {
        for v in &mut values {
            *v = *v / max;
        }
    }

    Ok(GradCamDetail {
        heatmap: Heatmap {
            values,
            width: in_w,
            height: in_h,
            source_layer: conv_idx,
            degenerate,
        },
        raw,
        raw_height: ah,
        raw_width: aw,
        channel_weights,
    })
}

/// Bilinear upsample with the same half-pixel convention as image resizing.
fn upsample_bilinear<T: Scalar>(src: &[T], sw: usize, sh: usize, tw: usize, th: usize) -> Vec<T> {
    if (sw, sh) == (tw, th) {
        return src.to_vec();
    }
    let sx_scale = sw as f64 / tw as f64;
    let sy_scale = sh as f64 / th as f64;
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let mut out = Vec::with_capacity(tw * th);
    for ty in 0..th {
        let sy = ((ty as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f64;
        for tx in 0..tw {
            let sx = ((tx as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f64;
            let p00 = src[y0 * sw + x0].as_f64();
            let p01 = src[y0 * sw + x1].as_f64();
            let p10 = src[y1 * sw + x0].as_f64();
            let p11 = src[y1 * sw + x1].as_f64();
            out.push(T::from_f64(lerp(
                lerp(p00, p01, fx),
                lerp(p10, p11, fx),
                fy,
            )));
        }
    }
    out
}

/// Blue -> green -> red colormap over `[0, 1]`, returning RGB in `[0, 1]`.
fn colormap(v: f64) -> (f64, f64, f64) {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.5 {
        let t = 2.0 * v;
        (0.0, t, 1.0 - t)
    } else {
        let t = 2.0 * (v - 0.5);
        (t, 1.0 - t, 0.0)
    }
}

/// Alpha-blend the colormapped heatmap over the original image.
/// `alpha = 0` reproduces the original exactly; `alpha = 1` is the pure
/// colormap.
pub fn overlay<T: Scalar>(
    heatmap: &Heatmap<T>,
    original: &Tensor<T>,
    alpha: f64,
) -> Result<RgbImage> {
    let [n, c, h, w] = original.shape();
    if n != 1 || c != 3 || h != heatmap.height || w != heatmap.width {
        return Err(Error::ShapeMismatch {
            op: "overlay",
            lhs: vec![1, 3, heatmap.height, heatmap.width],
            rhs: original.shape().to_vec(),
        });
    }
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let (hr, hg, hb) = colormap(heatmap.at(y, x).as_f64());
            let blend = |orig: f64, heat: f64| {
                (((1.0 - alpha) * orig + alpha * heat) * 255.0)
                    .round()
                    .clamp(0.0, 255.0) as u8
            };
            img.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    blend(original.at(0, 0, y, x).as_f64(), hr),
                    blend(original.at(0, 1, y, x).as_f64(), hg),
                    blend(original.at(0, 2, y, x).as_f64(), hb),
                ]),
            );
        }
    }
    Ok(img)
}

/// Raw heatmap values as CSV, one row per image row.
pub fn write_heatmap_csv<T: Scalar>(
    heatmap: &Heatmap<T>,
    w: &mut impl std::io::Write,
) -> Result<()> {
    for y in 0..heatmap.height {
        let row: Vec<String> = (0..heatmap.width)
            .map(|x| format!("{:.6}", heatmap.at(y, x).as_f64()))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
