//! Minimal reverse-mode differentiation over dense matrices.
//!
//! The operation set is exactly what the training losses need: dense and
//! sparse·dense products, elementwise arithmetic with row/column broadcasting,
//! activations, row softmax, trace, Frobenius norm, row gathers. [`Tape`]
//! evaluates eagerly and differentiates a scalar root; [`check_gradients`]
//! compares the result against central finite differences; [`Adam`] applies
//! the updates.

mod adam;
mod check;
mod tape;

pub use adam::Adam;
pub use check::{check_gradients, GradCheck};
pub use tape::{Gradients, Tape, Var, GUARD};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("division by a zero guarded denominator")]
    ZeroDenominator,
    #[error("log of a non-positive guarded argument")]
    LogDomain,
    #[error("gradient root must be 1x1, got {0:?}")]
    NonScalarRoot((usize, usize)),
    #[error("{0} needs at least one operand")]
    Empty(&'static str),
    #[error("row index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(usize),
    #[error("optimizer got {got} tensors, expected {expected}")]
    TensorCount { got: usize, expected: usize },
}
