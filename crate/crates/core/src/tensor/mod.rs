//! Dense 2-D tensors with tape-based reverse-mode differentiation.
//!
//! Every model computation is expressed through the primitives on [`Var`]. A
//! [`Tape`] lives for one forward/backward cycle; parameters are bound to
//! it as leaves, and [`Tape::backward`] returns the gradient of a scalar
//! loss with respect to every leaf that requires one.

mod dense;
mod gradcheck;
mod scalar;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{grad_check, grad_check_many};
pub use scalar::{Precision, Scalar};
pub use tape::{Gradients, SeqLayout, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: [usize; 2], len: usize },
    #[error("{op}: empty row cannot be normalized")]
    EmptyRow { op: &'static str },
    #[error("{op}: index {index} out of range for {rows} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss([usize; 2]),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("{0}")]
    InvalidArgument(String),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, left: [usize; 2], right: [usize; 2]) -> Self {
        TensorError::ShapeMismatch { op, left, right }
    }
}
