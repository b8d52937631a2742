//! Minimal neural-network kernel.
//!
//! Layers keep the activations of their last forward pass and accumulate
//! parameter gradients on `backward`, so a mini-batch is processed one
//! example at a time. Everything is generic over [`Real`]: training runs in
//! `f32`, gradient verification in `f64`.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod gru;
pub mod layers;
pub mod loss;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::{conv2d, conv2d_backward, Conv2d, Padding};
pub use dense::Dense;
pub use gradcheck::{grad_check, Differentiable};
pub use gru::{bidirectional, gru_cell, BiGru, Gru, GruParams};
pub use layers::{Dropout, MaxPoolFreq, Relu, Unfold};
pub use loss::{weighted_bce, LossConfig};
pub use tensor::{Param, Real, Tensor};

use rand::Rng;

/// Uniform initialisation in `[-limit, limit]`.
pub(crate) fn uniform<T: Real, R: Rng>(rng: &mut R, n: usize, limit: f64) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.gen_range(-limit..=limit))).collect()
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
