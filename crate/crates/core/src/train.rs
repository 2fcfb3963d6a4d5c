//! Training: binary cross-entropy loss, Adam, the epoch loop with
//! wall-clock capture, and the single-image inference latency benchmark.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{augment, AugmentParams, LoadedDataset};
use crate::error::{Error, Result};
use crate::nn::{Gradients, Model, ParamPair};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Decision threshold used for training-accuracy reporting.
pub const SCORE_THRESHOLD: f64 = 0.5;

/// Optimizer selection. Only Adam is implemented; the enum keeps the choice
/// explicit in configs and artifacts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub augment: bool,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            augment: false,
            seed: 0,
            shuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-epoch training record. `epoch` is 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub seconds: f64,
}

/// Binary cross-entropy of one score against a 0/1 label. The score is
/// clamped to `[1e-7, 1 - 1e-7]` so the logarithms stay finite.
pub fn bce_loss<T: Scalar>(score: T, label: T) -> T {
    let lo = T::from_f64(1e-7);
    let hi = T::one() - lo;
    let p = score.max(lo).min(hi);
    -(label * p.ln() + (T::one() - label) * (T::one() - p).ln())
}

/// First/second moment estimates, aligned with the model's parameter list.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<Option<ParamPair<T>>>,
    v: Vec<Option<ParamPair<T>>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn zeros_like(params: &[Option<ParamPair<T>>]) -> Self {
        let zero = |params: &[Option<ParamPair<T>>]| {
            params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| ParamPair {
                        weights: Tensor::zeros(p.weights.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    })
                })
                .collect()
        };
        Self {
            m: zero(params),
            v: zero(params),
        }
    }

    /// Largest absolute first-moment entry; used by tests observing decay.
    pub fn max_abs_first_moment(&self) -> f64 {
        self.m
            .iter()
            .flatten()
            .flat_map(|p| p.weights.data().iter().chain(p.bias.data()))
            .map(|v| v.as_f64().abs())
            .fold(0.0, f64::max)
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update_slice<T: Scalar>(
    w: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    bc1: T,
    bc2: T,
) {
    let one = T::one();
    for i in 0..w.len() {
        let gi = g[i];
        m[i] = beta1 * m[i] + (one - beta1) * gi;
        v[i] = beta2 * v[i] + (one - beta2) * gi * gi;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam step with bias correction. `t` is the 1-based step index.
pub fn adam_step<T: Scalar>(
    params: &mut [Option<ParamPair<T>>],
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    t: usize,
    config: &TrainConfig,
) -> Result<()> {
    assert!(t >= 1, "adam step index is 1-based");
    let Optimizer::Adam {
        beta1,
        beta2,
        epsilon,
    } = config.optimizer;
    let lr = T::from_f64(config.learning_rate);
    let b1 = T::from_f64(beta1);
    let b2 = T::from_f64(beta2);
    let eps = T::from_f64(epsilon);
    let bc1 = T::from_f64(1.0 - beta1.powi(t as i32));
    let bc2 = T::from_f64(1.0 - beta2.powi(t as i32));

    if grads.per_layer.len() != params.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.per_layer.len()],
        });
    }
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(&grads.per_layer)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        match (p, g, m, v) {
            (None, None, None, None) => {}
            (Some(p), Some(g), Some(m), Some(v)) => {
                if p.weights.shape() != g.weights.shape() || p.bias.shape() != g.bias.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "adam_step",
                        lhs: p.weights.shape().to_vec(),
                        rhs: g.weights.shape().to_vec(),
                    });
                }
                adam_update_slice(
                    p.weights.data_mut(),
                    g.weights.data(),
                    m.weights.data_mut(),
                    v.weights.data_mut(),
                    lr,
                    b1,
                    b2,
                    eps,
                    bc1,
                    bc2,
                );
                adam_update_slice(
                    p.bias.data_mut(),
                    g.bias.data(),
                    m.bias.data_mut(),
                    v.bias.data_mut(),
                    lr,
                    b1,
                    b2,
                    eps,
                    bc1,
                    bc2,
                );
            }
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: vec![],
                    rhs: vec![],
                });
            }
        }
    }
    Ok(())
}

/// Incremental training driver. Owns the model and optimizer state so
/// callers can run epochs one at a time (the epoch loop in [`train`] and the
/// overfit harnesses both go through here).
pub struct Trainer<T: Scalar> {
    model: Model<T>,
    state: AdamState<T>,
    config: TrainConfig,
    aug: AugmentParams,
    step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig, aug: AugmentParams) -> Result<Self> {
        config.validate()?;
        let state = AdamState::zeros_like(model.params());
        Ok(Self {
            model,
            state,
            config,
            aug,
            step: 0,
        })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn into_model(self) -> Model<T> {
        self.model
    }

    /// Run one epoch over the dataset: shuffle (seeded from
    /// `config.seed ^ epoch`), assemble batches (last partial batch kept),
    /// optionally augment each image with its per-sample rng stream, then
    /// forward/backward/Adam per batch.
    pub fn run_epoch(&mut self, data: &LoadedDataset<T>, epoch: usize) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("training split is empty"));
        }
        let started = Instant::now();
        let n = data.len();
        let (c, h, w) = self.model.spec().input_shape;
        let item_len = c * h * w;

        let mut order: Vec<usize> = (0..n).collect();
        if self.config.shuffle_each_epoch {
            SplitMix64::new(self.config.seed ^ epoch as u64).shuffle(&mut order);
        }

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let threshold = T::from_f64(SCORE_THRESHOLD);

        for chunk in order.chunks(self.config.batch_size) {
            let bs = chunk.len();
            let mut batch = Tensor::zeros([bs, c, h, w]);
            let augmenting = self.config.augment;
            let seed = self.config.seed;
            let aug = &self.aug;
            batch
                .data_mut()
                .par_chunks_mut(item_len)
                .zip(chunk.par_iter())
                .for_each(|(slot, &sample_idx)| {
                    let image = &data.images[sample_idx];
                    if augmenting {
                        let mut rng = SplitMix64::derive(seed, epoch as u64, sample_idx as u64);
                        let view = augment(image, aug, &mut rng);
                        slot.copy_from_slice(view.data());
                    } else {
                        slot.copy_from_slice(image.data());
                    }
                });

            let labels: Vec<T> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (scores, cache) = self.model.forward(&batch)?;
            for (&p, &y) in scores.iter().zip(&labels) {
                loss_sum += bce_loss(p, y).as_f64();
                let predicted = p >= threshold;
                if predicted == (y == T::one()) {
                    correct += 1;
                }
            }
            let grads = self.model.backward(&cache, &labels)?;
            self.step += 1;
            adam_step(
                self.model.params_mut(),
                &grads,
                &mut self.state,
                self.step,
                &self.config,
            )?;
        }

        Ok(EpochStats {
            epoch,
            loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
            seconds: started.elapsed().as_secs_f64(),
        })
    }
}

/// Train `model` on the train split of `manifest` for `config.epochs`
/// epochs. Images are decoded and resized up front (decode failures surface
/// the offending path); augmentation, when enabled, is applied on the fly
/// per epoch. Returns the trained model and one [`EpochStats`] per epoch.
pub fn train<T: Scalar>(
    manifest: &crate::data::DatasetManifest,
    model: Model<T>,
    config: &TrainConfig,
    aug: &AugmentParams,
) -> Result<(Model<T>, Vec<EpochStats>)> {
    let (_, h, _) = model.spec().input_shape;
    let data = crate::data::load_split(manifest, crate::data::Split::Train, h)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset("manifest has no train samples"));
    }
    train_loaded(&data, model, config, aug)
}

/// Train on an already-decoded dataset. The epoch loop behind [`train`];
/// also driven directly by the overfit harnesses.
pub fn train_loaded<T: Scalar>(
    data: &LoadedDataset<T>,
    model: Model<T>,
    config: &TrainConfig,
    aug: &AugmentParams,
) -> Result<(Model<T>, Vec<EpochStats>)> {
    let mut trainer = Trainer::new(model, config.clone(), aug.clone())?;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        history.push(trainer.run_epoch(data, epoch)?);
    }
    Ok((trainer.into_model(), history))
}

/// Write training history as CSV: `epoch,loss,train_acc,seconds`.
pub fn write_history_csv(stats: &[EpochStats], w: &mut impl std::io::Write) -> Result<()> {
    writeln!(w, "epoch,loss,train_acc,seconds")?;
    for s in stats {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.3}",
            s.epoch, s.loss, s.train_accuracy, s.seconds
        )?;
    }
    Ok(())
}

/// Single-image forward latency statistics, in seconds.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LatencyStats {
    pub mean_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub iters: usize,
    pub warmup: usize,
}

/// Time forward-only single-image inference. Decode/resize are excluded by
/// construction: the caller hands over an already-prepared tensor.
pub fn benchmark_single_image<T: Scalar>(
    model: &Model<T>,
    image: &Tensor<T>,
    warmup: usize,
    iters: usize,
) -> Result<LatencyStats> {
    const MIN_ITERS: usize = 30;
    if iters < MIN_ITERS {
        return Err(Error::TooFewIterations {
            min: MIN_ITERS,
            got: iters,
        });
    }
    for _ in 0..warmup {
        std::hint::black_box(model.score(image)?);
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        std::hint::black_box(model.score(image)?);
        samples.push(t0.elapsed().as_secs_f64());
    }
    let mean = samples.iter().sum::<f64>() / iters as f64;
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let rank = |q: f64| {
        let idx = (q * iters as f64).ceil() as usize;
        samples[idx.clamp(1, iters) - 1]
    };
    Ok(LatencyStats {
        mean_s: mean,
        p50_s: rank(0.50),
        p95_s: rank(0.95),
        iters,
        warmup,
    })
}
