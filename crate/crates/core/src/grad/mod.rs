//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records each forward operation together with whatever it needs
//! for its backward rule (pooling argmax, dropout masks, targets). Parameters
//! enter as trainable leaves; data enters as constants. After
//! [`Tape::backward`] the leaf gradients can be read back with [`Tape::grad`].
//!
//! Every forward value and every propagated gradient is checked for NaN and
//! infinity; the first offender aborts with [`crate::Error::NonFinite`] naming
//! the operation.

mod kernels;
mod tape;
mod tensor;

pub use tape::{bce_with_logit, sigmoid, NodeId, Padding, Tape};
pub use tensor::Tensor;
