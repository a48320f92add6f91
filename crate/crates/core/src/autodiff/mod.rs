//! Minimal dense reverse-mode differentiation engine and the Adam optimizer.
//!
//! The engine is deliberately small: a [`Tape`] records each op together with
//! the handles of its inputs, and [`Tape::backward`] walks the record in
//! reverse. Values are `f64` throughout.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Additive mask value standing in for negative infinity before a softmax.
pub const MASK_SENTINEL: f64 = -1e9;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("concatenation of zero tensors")]
    EmptyConcat,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{targets} targets for {rows} rows of logits")]
    TargetCount { rows: usize, targets: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
    #[error("{grads} gradients for {params} parameters")]
    ParamCount { params: usize, grads: usize },
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Self {
        Self::ShapeMismatch {
            op,
            lhs: lhs.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        }
    }
}
