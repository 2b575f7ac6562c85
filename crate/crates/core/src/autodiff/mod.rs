//! Dense fp64 matrices with a reverse-mode tape.
//!
//! Forward operations are recorded on a [`Tape`] as they execute; a single
//! reverse sweep from a scalar root yields gradients for every leaf that
//! requires them. Gradients are handed back as [`Grads`] and added into
//! [`Tensor`] accumulators explicitly, so accumulation across several sweeps
//! is the caller's choice and is only cleared by [`Tensor::zero_grad`].

mod gradcheck;
pub(crate) mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{analytic_gradient, finite_difference_check};
pub use tape::{Grads, Tape, Var, NORM_EPS};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("dimension error in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("degenerate vector in {op}: norm {norm:e}")]
    Degenerate { op: &'static str, norm: f64 },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("backward needs a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{0}")]
    Contract(String),
}
