//! Minimal reverse-mode automatic differentiation over dense matrices, with
//! the optimizers and scalar special functions the objectives need.

mod gradcheck;
mod matrix;
mod optim;
pub mod special;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheck, GRADIENT_FLOOR};
pub use matrix::Matrix;
pub(crate) use matrix::sq_dist;
pub use optim::{adadelta_step, adam_step, OptimizerKind, OptimizerState};
pub use tape::{Gradients, Tape, Var};

/// Default negative-side slope for leaky ReLU activations.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("expected a 1x1 value, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("{0}")]
    InvalidArgument(String),
}
