//! Dense tensors with define-by-run reverse-mode differentiation.

mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod params;
mod real;
mod tape;
mod tensor;

use alloc::vec::Vec;

pub use gradcheck::{
    analytic_gradient, eval_f64, gradcheck, gradcheck_subset, numeric_gradient, relative_errors,
    GradcheckReport, Objective,
};
pub use ops::{concat, mse};
pub use params::{Bound, ParamSet};
pub use real::Real;
pub use tape::{BackwardArgs, BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape {
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("unknown parameter {0}")]
    UnknownParameter(alloc::string::String),
    #[error("parameter {0} defined twice")]
    DuplicateParameter(alloc::string::String),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("tape node {node} depends on later node {input}")]
    Cycle { node: usize, input: usize },
    #[error("{0}")]
    InvalidArgument(&'static str),
}
