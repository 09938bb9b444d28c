//! Kernel two-sample testing with learned deep kernels, and fair
//! representation learning that suppresses the power of a block MMD test on a
//! sensitive attribute while keeping it high on the target.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diff;
pub mod estimators;
pub mod evaluation;
pub mod fairlearn;
pub mod kernels;

pub use data::{DatasetSplit, Schema, Splits};
pub use diff::{DiffError, Matrix, OptimizerKind, Tape, Var};
pub use estimators::{PowerConfig, TestResult};
pub use evaluation::{AuditReport, FairnessReport};
pub use fairlearn::{FairModel, FairnessWeights, Mode, TrainConfig};
pub use kernels::{Featurizer, HMatrix, KernelSpec};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("groups differ in size: {p} vs {q}")]
    UnequalGroups { p: usize, q: usize },
    #[error("need at least {needed} samples, found {found}")]
    InsufficientSamples { needed: usize, found: usize },
    #[error("empty group: {0}")]
    EmptyGroup(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
