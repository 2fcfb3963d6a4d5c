//! Scalar abstraction for the numeric core.
//!
//! All tensor and layer math is generic over [`Scalar`] so the same code runs
//! in `f32` for production and in `f64` for gradient-check shadow mode.

use std::fmt::{Debug, Display};

use num_traits::Float;

/// Floating-point scalar usable inside tensors, layers and optimizers.
pub trait Scalar: Float + Debug + Display + Send + Sync + Default + 'static {
    /// Lossless-enough conversion from `f64` (exact for `f64`, rounded for `f32`).
    fn from_f64(v: f64) -> Self;
    /// Widening conversion to `f64` (exact for both supported types).
    fn as_f64(self) -> f64;
}

macro_rules! impl_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    )*};
}

impl_scalar!(f32, f64);
