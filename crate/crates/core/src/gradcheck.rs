//! Finite-difference gradient checking in the `f64` shadow mode.
//!
//! Analytic gradients from backprop are compared against central
//! differences of the loss. Production runs in `f32`; these harnesses
//! instantiate the identical generic code in `f64` so the comparison is not
//! drowned in single-precision rounding.

use crate::nn::{Gradients, Model};
use crate::tensor::Tensor;
use crate::train::bce_loss;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Central difference gradient of `f` at `x`, one component per entry.
pub fn numeric_grad(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Worst relative error between analytic and numeric gradients. The
/// denominator is floored so that entries which are legitimately ~0 on both
/// sides do not blow up the ratio.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Mean binary cross-entropy of the model over a labeled batch; the scalar
/// objective differentiated by [`Model::backward`].
pub fn model_bce_loss(model: &Model<f64>, batch: &Tensor<f64>, labels: &[f64]) -> f64 {
    let scores = model.score(batch).expect("shapes validated by caller");
    scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce_loss(p, y))
        .sum::<f64>()
        / labels.len() as f64
}

/// Flatten every parameter gradient into one vector, in layer order,
/// weights before bias.
pub fn flatten_gradients(grads: &Gradients<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for p in grads.per_layer.iter().flatten() {
        out.extend_from_slice(p.weights.data());
        out.extend_from_slice(p.bias.data());
    }
    out
}

fn flatten_params(model: &Model<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for p in model.params().iter().flatten() {
        out.extend_from_slice(p.weights.data());
        out.extend_from_slice(p.bias.data());
    }
    out
}

fn load_params(model: &mut Model<f64>, flat: &[f64]) {
    let mut offset = 0;
    for p in model.params_mut().iter_mut().flatten() {
        let w = p.weights.data_mut();
        w.copy_from_slice(&flat[offset..offset + w.len()]);
        offset += w.len();
        let b = p.bias.data_mut();
        b.copy_from_slice(&flat[offset..offset + b.len()]);
        offset += b.len();
    }
    assert_eq!(offset, flat.len());
}

/// Full-model gradient check: worst relative error between backprop and
/// central finite differences of the mean BCE loss, over every parameter.
///
/// Caveat: finite differences are only valid where the loss is smooth over
/// the whole `+-step` interval. For models with relu/max-pool kinks use
/// [`check_model_gradients_excluding_kinks`].
pub fn check_model_gradients(
    model: &Model<f64>,
    batch: &Tensor<f64>,
    labels: &[f64],
    step: f64,
) -> f64 {
    let (_, cache) = model.forward(batch).expect("valid batch");
    let analytic = flatten_gradients(&model.backward(&cache, labels).expect("valid labels"));

    let x0 = flatten_params(model);
    let mut probe = model.clone();
    let mut f = |x: &[f64]| {
        load_params(&mut probe, x);
        model_bce_loss(&probe, batch, labels)
    };
    let numeric = numeric_grad(&mut f, &x0, step);
    max_rel_error(&analytic, &numeric)
}

/// Outcome of [`check_model_gradients_excluding_kinks`].
#[derive(Clone, Copy, Debug)]
pub struct KinkAwareReport {
    pub worst_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

/// Full-model finite-difference check that skips exactly the parameters
/// whose `+-step` interval can cross a non-differentiability.
///
/// Perturbing one convolution weight (or bias) by `step` moves that
/// channel's pre-activations by at most `step * max|input|`. A channel is
/// therefore only compared when every pre-activation sits farther than
/// `3 * step` from the relu kink and every max-pool window has a top-two
/// gap above `3 * step` (with inputs bounded by 1). This is the same
/// exclusion the pool-level oracle applies by perturbing ties apart, done
/// analytically. Parameters downstream of the kinks (the dense head) are
/// always smooth in the loss and always checked.
///
/// Supports the single-convolution architectures used as gradient-check
/// toys; deeper stacks would need channel-to-channel amplification bounds.
pub fn check_model_gradients_excluding_kinks(
    model: &Model<f64>,
    batch: &Tensor<f64>,
    labels: &[f64],
    step: f64,
) -> KinkAwareReport {
    use crate::nn::LayerSpec;

    let spec = model.spec();
    assert_eq!(
        spec.conv_layer_count(),
        1,
        "kink margins are only tracked through a single conv layer"
    );
    assert!(
        batch.data().iter().all(|v| (0.0..=1.0).contains(v)),
        "margin bound assumes inputs in [0, 1]"
    );
    let conv_idx = spec.last_conv_index().expect("one conv layer");

    let (_, cache) = model.forward(batch).expect("valid batch");
    let analytic = flatten_gradients(&model.backward(&cache, labels).expect("valid labels"));

    // Safety margin per conv output channel.
    let margin_limit = 3.0 * step;
    let preact = &cache.activations[conv_idx + 1];
    let [n, oc, h, w] = preact.shape();
    let mut margins = vec![f64::INFINITY; oc];
    for ni in 0..n {
        for (k, margin) in margins.iter_mut().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let v: f64 = preact.at(ni, k, y, x);
                    *margin = margin.min(v.abs());
                }
            }
        }
    }
    // Pool top-two gap, when the conv feeds relu -> max-pool.
    let relu_follows = matches!(spec.layers.get(conv_idx + 1), Some(LayerSpec::Relu));
    let pool_follows = matches!(spec.layers.get(conv_idx + 2), Some(LayerSpec::MaxPool2x2));
    if relu_follows && pool_follows {
        let post = &cache.activations[conv_idx + 2];
        for ni in 0..n {
            for (k, margin) in margins.iter_mut().enumerate() {
                for y in (0..h).step_by(2) {
                    for x in (0..w).step_by(2) {
                        let mut vals = [
                            post.at(ni, k, y, x),
                            post.at(ni, k, y, x + 1),
                            post.at(ni, k, y + 1, x),
                            post.at(ni, k, y + 1, x + 1),
                        ];
                        vals.sort_by(|a: &f64, b: &f64| b.partial_cmp(a).unwrap());
                        if vals[0] > 0.0 {
                            // A clipped runner-up can only catch up by first
                            // crossing its own relu kink, which the preact
                            // margin already guards.
                            if vals[1] > 0.0 {
                                *margin = margin.min(vals[0] - vals[1]);
                            }
                        }
                    }
                }
            }
        }
    }

    // Safe-parameter mask in flattened order (layer order, weights then bias).
    let mut mask = Vec::with_capacity(analytic.len());
    for (i, params) in model.params().iter().enumerate() {
        let Some(p) = params else { continue };
        if i == conv_idx {
            let [_, kic, kh, kw] = p.weights.shape();
            let per_channel = kic * kh * kw;
            for &m in &margins {
                mask.extend(std::iter::repeat_n(m > margin_limit, per_channel));
            }
            mask.extend(margins.iter().map(|&m| m > margin_limit));
        } else {
            mask.extend(std::iter::repeat_n(true, p.weights.len() + p.bias.len()));
        }
    }
    assert_eq!(mask.len(), analytic.len());

    let x0 = flatten_params(model);
    let mut probe = model.clone();
    let mut f = |x: &[f64]| {
        load_params(&mut probe, x);
        model_bce_loss(&probe, batch, labels)
    };

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut point = x0.clone();
    for i in 0..x0.len() {
        if !mask[i] {
            continue;
        }
        let orig = point[i];
        point[i] = orig + step;
        let plus = f(&point);
        point[i] = orig - step;
        let minus = f(&point);
        point[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        checked += 1;
    }
    KinkAwareReport {
        worst_rel_error: worst,
        checked,
        excluded: x0.len() - checked,
    }
}
