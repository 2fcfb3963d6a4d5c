//! Model architectures, parameter initialization, forward/backward passes
//! and checkpoint serialization.
//!
//! Three shallow architectures are built in, named by their convolution
//! depth: `cnn1`, `cnn2` and `cnn3`. All convolutions are 3x3 stride-1 with
//! same padding, all pools are 2x2 stride-2, and the classifier head ends in
//! a single sigmoid logit.

pub mod layers;

mod checkpoint;
pub use checkpoint::{load_model, save_model, FORMAT_VERSION, MAGIC};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard input resolution: RGB at 64x64, pixel values scaled to [0, 1].
pub const INPUT_SHAPE: (usize, usize, usize) = (3, 64, 64);

/// Architecture identifier. The digit is the number of convolution layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchId {
    Cnn1,
    Cnn2,
    Cnn3,
}

impl ArchId {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn1" => Ok(Self::Cnn1),
            "cnn2" => Ok(Self::Cnn2),
            "cnn3" => Ok(Self::Cnn3),
            other => Err(Error::UnknownArch(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cnn1 => "cnn1",
            Self::Cnn2 => "cnn2",
            Self::Cnn3 => "cnn3",
        }
    }

    /// Output channels of each convolution block, in order.
    pub fn conv_channels(self) -> &'static [usize] {
        match self {
            Self::Cnn1 => &[32],
            Self::Cnn2 => &[32, 64],
            Self::Cnn3 => &[32, 64, 128],
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Self::Cnn1 => 1,
            Self::Cnn2 => 2,
            Self::Cnn3 => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Self::Cnn1),
            2 => Ok(Self::Cnn2),
            3 => Ok(Self::Cnn3),
            other => Err(Error::UnknownArch(format!("arch byte {other}"))),
        }
    }
}

impl std::fmt::Display for ArchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One layer of a model. Convolutions are fixed at 3x3 same padding and
/// pools at 2x2 stride 2, so only the free hyperparameters appear here.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d { out_channels: usize },
    MaxPool2x2,
    Flatten,
    Dense { out_features: usize },
    Relu,
    Sigmoid,
}

/// Declarative model description: architecture label, input shape and the
/// ordered layer list. The layer list is open so tests can build synthetic
/// stacks, but [`ModelSpec::standard`] and [`ModelSpec::with_input`] produce
/// the canonical architectures.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub arch: ArchId,
    /// `(channels, height, width)`.
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Canonical architecture at the standard 3x64x64 input:
    /// `[conv C -> relu -> pool]` per conv block, then for cnn2/cnn3 a
    /// `flatten -> dense 128 -> relu -> dense 1 -> sigmoid` head, and for
    /// cnn1 a direct `flatten -> dense 1 -> sigmoid` head.
    pub fn standard(arch: ArchId) -> Self {
        Self::with_input(arch, INPUT_SHAPE)
    }

    /// Canonical architecture over an arbitrary input shape. Used by the
    /// gradient-check harnesses, which run toy inputs like 3x8x8.
    pub fn with_input(arch: ArchId, input_shape: (usize, usize, usize)) -> Self {
        let mut layers = Vec::new();
        for &ch in arch.conv_channels() {
            layers.push(LayerSpec::Conv2d { out_channels: ch });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::MaxPool2x2);
        }
        layers.push(LayerSpec::Flatten);
        if arch != ArchId::Cnn1 {
            layers.push(LayerSpec::Dense { out_features: 128 });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { out_features: 1 });
        layers.push(LayerSpec::Sigmoid);
        Self {
            arch,
            input_shape,
            layers,
        }
    }

    /// Activation shape `(c, h, w)` after each layer, starting with the
    /// input shape at index 0. Errors if any layer is shape-inconsistent.
    pub fn activation_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut shapes = vec![self.input_shape];
        let (mut c, mut h, mut w) = self.input_shape;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv2d { out_channels } => {
                    if out_channels == 0 {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: conv2d with zero output channels"
                        )));
                    }
                    c = out_channels;
                }
                LayerSpec::MaxPool2x2 => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: max-pool over odd extent {h}x{w}"
                        )));
                    }
                    h /= 2;
                    w /= 2;
                }
                LayerSpec::Flatten => {
                    c *= h * w;
                    h = 1;
                    w = 1;
                }
                LayerSpec::Dense { out_features } => {
                    if h != 1 || w != 1 {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: dense over unflattened shape ({c},{h},{w})"
                        )));
                    }
                    if out_features == 0 {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: dense with zero output features"
                        )));
                    }
                    c = out_features;
                }
                LayerSpec::Relu | LayerSpec::Sigmoid => {}
            }
            shapes.push((c, h, w));
        }
        Ok(shapes)
    }

    /// Weight and bias shapes per layer (`None` for parameterless layers).
    pub fn param_shapes(&self) -> Result<Vec<Option<ParamShapes>>> {
        let shapes = self.activation_shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(i, layer)| match *layer {
                LayerSpec::Conv2d { out_channels } => {
                    let (in_c, _, _) = shapes[i];
                    Some((
                        [out_channels, in_c, layers::KERNEL, layers::KERNEL],
                        [out_channels, 1, 1, 1],
                    ))
                }
                LayerSpec::Dense { out_features } => {
                    let (in_f, _, _) = shapes[i];
                    Some(([out_features, in_f, 1, 1], [out_features, 1, 1, 1]))
                }
                _ => None,
            })
            .collect())
    }

    /// Shape consistency plus the binary-head contract: the last layer must
    /// be a sigmoid over a single logit.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.activation_shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Sigmoid) => {}
            _ => {
                return Err(Error::InvalidSpec(
                    "final layer must be sigmoid".to_string(),
                ))
            }
        }
        let &(c, h, w) = shapes.last().expect("at least the input shape");
        if (c, h, w) != (1, 1, 1) {
            return Err(Error::InvalidSpec(format!(
                "final activation must be a single logit, got ({c},{h},{w})"
            )));
        }
        Ok(())
    }

    pub fn conv_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv2d { .. }))
            .count()
    }

    /// Index of the last convolution layer, the Grad-CAM target.
    pub fn last_conv_index(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Conv2d { .. }))
    }

    /// Total number of trainable parameters.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .flatten()
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum())
    }
}

/// Weight and bias shapes of one parameterized layer.
pub type ParamShapes = ([usize; 4], [usize; 4]);

/// Weight/bias pair of one parameterized layer. Also reused as the gradient
/// carrier, where `weights`/`bias` hold the corresponding gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamPair<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of the loss with respect to every model parameter, aligned
/// with the model's layer list.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub per_layer: Vec<Option<ParamPair<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Largest absolute gradient entry, in f64.
    pub fn max_abs(&self) -> f64 {
        self.per_layer
            .iter()
            .flatten()
            .flat_map(|p| p.weights.data().iter().chain(p.bias.data()))
            .map(|v| v.as_f64().abs())
            .fold(0.0, f64::max)
    }
}

/// Everything the forward pass saw: the input and the activation after each
/// layer, plus max-pool argmax tables. Feeds both backprop and Grad-CAM.
#[derive(Clone, Debug)]
pub struct Cache<T> {
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    pub activations: Vec<Tensor<T>>,
    /// Argmax tables for max-pool layers, indexed by layer.
    pub pool_argmax: Vec<Option<Vec<usize>>>,
}

impl<T: Scalar> Cache<T> {
    /// Pre-sigmoid logits, shaped `(n, 1, 1, 1)`.
    pub fn logits(&self) -> &Tensor<T> {
        &self.activations[self.activations.len() - 2]
    }
}

/// A model: spec plus learned parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    spec: ModelSpec,
    params: Vec<Option<ParamPair<T>>>,
    rng_seed: u64,
}

/// Build a canonical architecture with deterministic seeded initialization.
pub fn build_model<T: Scalar>(arch: ArchId, seed: u64) -> Model<T> {
    Model::init(ModelSpec::standard(arch), seed).expect("standard specs are valid")
}

impl<T: Scalar> Model<T> {
    /// Initialize parameters for `spec`: weights uniform in
    /// `+-sqrt(6 / fan_in)` from a splitmix64 stream, biases zero.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = SplitMix64::new(seed);
        let params = spec
            .param_shapes()?
            .into_iter()
            .map(|shapes| {
                shapes.map(|(w_shape, b_shape)| {
                    // fan_in: inputs feeding one output unit.
                    let fan_in: usize = w_shape[1] * w_shape[2] * w_shape[3];
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let data = (0..w_shape.iter().product::<usize>())
                        .map(|_| T::from_f64(rng.uniform(-bound, bound)))
                        .collect();
                    ParamPair {
                        weights: Tensor::from_vec(w_shape, data).expect("sized from shape"),
                        bias: Tensor::zeros(b_shape),
                    }
                })
            })
            .collect();
        Ok(Self {
            spec,
            params,
            rng_seed: seed,
        })
    }

    /// Build a model from externally supplied parameters (checkpoint load,
    /// synthetic test models). Shapes are validated against the spec.
    pub fn from_params(
        spec: ModelSpec,
        params: Vec<Option<ParamPair<T>>>,
        rng_seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_shapes()?;
        if params.len() != expected.len() {
            return Err(Error::InvalidSpec(format!(
                "parameter list length {} does not match {} layers",
                params.len(),
                expected.len()
            )));
        }
        for (i, (got, want)) in params.iter().zip(&expected).enumerate() {
            match (got, want) {
                (None, None) => {}
                (Some(p), Some((w, b))) => {
                    if p.weights.shape() != *w || p.bias.shape() != *b {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: parameter shapes {:?}/{:?} do not match spec {:?}/{:?}",
                            p.weights.shape(),
                            p.bias.shape(),
                            w,
                            b
                        )));
                    }
                }
                _ => {
                    return Err(Error::InvalidSpec(format!(
                        "layer {i}: parameter presence does not match spec"
                    )))
                }
            }
        }
        Ok(Self {
            spec,
            params,
            rng_seed,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn params(&self) -> &[Option<ParamPair<T>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<ParamPair<T>>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }

    /// Widen every parameter to `f64` for shadow-mode gradient checks.
    pub fn to_f64(&self) -> Model<f64> {
        Model {
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| ParamPair {
                        weights: p.weights.to_f64(),
                        bias: p.bias.to_f64(),
                    })
                })
                .collect(),
            rng_seed: self.rng_seed,
        }
    }

    /// Forward pass over a batch shaped `(n, c, h, w)` matching the spec's
    /// input shape. Returns the per-item sigmoid scores and the full
    /// activation cache.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<(Vec<T>, Cache<T>)> {
        let (c, h, w) = self.spec.input_shape;
        let [n, bc, bh, bw] = batch.shape();
        if n == 0 || (bc, bh, bw) != (c, h, w) {
            return Err(Error::BadInputShape {
                op: "forward",
                expected: vec![1, c, h, w],
                got: batch.shape().to_vec(),
            });
        }
        let mut activations = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut pool_argmax = vec![None; self.spec.layers.len()];
        activations.push(batch.clone());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = &activations[i];
            let out = match *layer {
                LayerSpec::Conv2d { .. } => {
                    let p = self.params[i].as_ref().expect("conv has params");
                    layers::conv2d_forward(x, &p.weights, &p.bias)?
                }
                LayerSpec::MaxPool2x2 => {
                    let (out, argmax) = layers::maxpool2x2_forward(x)?;
                    pool_argmax[i] = Some(argmax);
                    out
                }
                LayerSpec::Flatten => {
                    let [bn, fc, fh, fw] = x.shape();
                    x.clone().reshape([bn, fc * fh * fw, 1, 1])?
                }
                LayerSpec::Dense { .. } => {
                    let p = self.params[i].as_ref().expect("dense has params");
                    layers::dense_forward(x, &p.weights, &p.bias)?
                }
                LayerSpec::Relu => layers::relu_forward(x),
                LayerSpec::Sigmoid => layers::sigmoid_forward(x),
            };
            activations.push(out);
        }
        let scores = activations.last().expect("at least input").data().to_vec();
        Ok((
            scores,
            Cache {
                activations,
                pool_argmax,
            },
        ))
    }

    /// Convenience: forward pass returning scores only.
    pub fn score(&self, batch: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.forward(batch)?.0)
    }

    /// Gradient of the mean binary cross-entropy loss over the batch with
    /// respect to every parameter. `cache` must come from a matching
    /// [`Model::forward`] call; `labels` are 0/1, one per batch item.
    pub fn backward(&self, cache: &Cache<T>, labels: &[T]) -> Result<Gradients<T>> {
        let scores = cache.activations.last().expect("forward ran");
        let n = scores.shape()[0];
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                scores: n,
                labels: labels.len(),
            });
        }
        for &l in labels {
            if l != T::zero() && l != T::one() {
                return Err(Error::BadLabel(l.as_f64()));
            }
        }
        // Fused sigmoid + BCE head: dL/dlogit = (p - y) / n. The final layer
        // is guaranteed by validation to be the sigmoid.
        let inv_n = T::one() / T::from_f64(n as f64);
        let mut grad = Tensor::zeros(scores.shape());
        for ((g, &p), &y) in grad.data_mut().iter_mut().zip(scores.data()).zip(labels) {
            *g = (p - y) * inv_n;
        }

        let mut per_layer: Vec<Option<ParamPair<T>>> = vec![None; self.spec.layers.len()];
        let last = self.spec.layers.len() - 1; // sigmoid layer, already fused
        for i in (0..last).rev() {
            let (next, params) = self.layer_backward(i, cache, &grad)?;
            grad = next;
            per_layer[i] = params;
        }
        Ok(Gradients { per_layer })
    }

    /// Gradient of the summed pre-sigmoid logit with respect to the *output*
    /// of `target_layer`. This is the "gradient flowing into" a layer that
    /// Grad-CAM consumes; parameter gradients are not materialized for the
    /// caller.
    pub fn logit_gradient_at(&self, cache: &Cache<T>, target_layer: usize) -> Result<Tensor<T>> {
        let last = self.spec.layers.len() - 1; // final sigmoid
        debug_assert!(target_layer < last);
        let logits = cache.logits();
        let mut grad = Tensor::full(logits.shape(), T::one());
        for i in (target_layer + 1..last).rev() {
            let (next, _) = self.layer_backward(i, cache, &grad)?;
            grad = next;
        }
        Ok(grad)
    }

    /// Backward through one layer: gradient w.r.t. its input, plus parameter
    /// gradients when the layer has any.
    fn layer_backward(
        &self,
        i: usize,
        cache: &Cache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Option<ParamPair<T>>)> {
        let x = &cache.activations[i];
        match self.spec.layers[i] {
            LayerSpec::Conv2d { .. } => {
                let p = self.params[i].as_ref().expect("conv has params");
                let (gi, gw, gb) = layers::conv2d_backward(x, &p.weights, grad_out)?;
                Ok((
                    gi,
                    Some(ParamPair {
                        weights: gw,
                        bias: gb,
                    }),
                ))
            }
            LayerSpec::MaxPool2x2 => {
                let argmax = cache.pool_argmax[i].as_ref().expect("pool ran forward");
                Ok((
                    layers::maxpool2x2_backward(x.shape(), argmax, grad_out),
                    None,
                ))
            }
            LayerSpec::Flatten => Ok((grad_out.clone().reshape(x.shape())?, None)),
            LayerSpec::Dense { .. } => {
                let p = self.params[i].as_ref().expect("dense has params");
                let (gi, gw, gb) = layers::dense_backward(x, &p.weights, grad_out)?;
                Ok((
                    gi,
                    Some(ParamPair {
                        weights: gw,
                        bias: gb,
                    }),
                ))
            }
            LayerSpec::Relu => Ok((layers::relu_backward(x, grad_out), None)),
            LayerSpec::Sigmoid => Ok((
                layers::sigmoid_backward(&cache.activations[i + 1], grad_out),
                None,
            )),
        }
    }
}
