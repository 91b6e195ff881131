//! Minimal dense tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! the tape as borrowed leaves, so building a graph never copies weights.
//! [`Tape::backward`] consumes the recorded graph and returns the gradient of
//! every leaf that requires one; the caller moves them into the owning
//! [`Tensor`]s and hands those to [`AdamW`].
//!
//! All math is generic over [`Scalar`]: `f32` for training and inference,
//! `f64` for gradient checking.

mod error;
mod kernels;
mod optim;
mod scalar;
mod tape;
mod tensor;

pub use error::{AutogradError, Result};
pub use optim::{clip_global_grad_norm, global_grad_norm, AdamW, AdamWConfig};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use kernels::{bce_with_logits, sigmoid};
pub use tensor::Tensor;
