//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckOptions, GradCheckReport};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{BinaryKind, Gradients, Tape, UnaryKind, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects a matrix, got shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("empty batch in {0}")]
    EmptyBatch(&'static str),
    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("{0}")]
    Invalid(String),
}
