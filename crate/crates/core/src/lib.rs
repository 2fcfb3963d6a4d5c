//! `snet` is a self-contained training and inference engine for shallow
//! convolutional binary classifiers over thin-blood-smear red-blood-cell
//! images (parasitized vs. uninfected).
//!
//! Everything runs on the CPU with no external ML runtime: dense 4-D tensors,
//! conv/pool/dense layers with hand-written backprop, Adam, a deterministic
//! data pipeline with on-the-fly augmentation, the usual binary-classifier
//! metrics (accuracy through MCC plus ROC/AUC), and Grad-CAM heatmaps over
//! the last convolutional layer.
//!
//! The numeric core is generic over the scalar type: production paths run in
//! `f32`, while gradient-check harnesses instantiate the same code in `f64`
//! (the "shadow mode" used by [`gradcheck`]).

pub mod data;
pub mod error;
pub mod gradcam;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Production tensor type: 32-bit floats.
pub type Tensor32 = tensor::Tensor<f32>;
/// Shadow-mode tensor type used by gradient-check harnesses.
pub type Tensor64 = tensor::Tensor<f64>;
/// Production model type.
pub type Model32 = nn::Model<f32>;
/// Shadow-mode model type.
pub type Model64 = nn::Model<f64>;
