//! Dense tensors and tape-based reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Operations are methods
//! on the tape that append a node and return a [`Var`] handle; nothing is
//! ever mutated in place, so a tape can be evaluated on any thread and
//! parameter tensors can be shared read-only between concurrent passes.

pub mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use ops::{gelu_scalar, normal_cdf};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Default layer-norm epsilon.
pub const LN_EPS: f64 = 1e-6;
