//! Minimal reverse-mode differentiation engine for small recurrent
//! actor-critic networks, with a finite-difference gradient checker.

mod gradcheck;
mod lstm;
mod optim;
mod params;
mod tape;

use thiserror::Error;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, TensorCheck};
pub use lstm::{lstm_step, LstmParams, LstmState};
pub use optim::Adam;
pub use params::{Bound, ParamStore, ParamTensor};
pub use tape::{log_sum_exp, softmax_in_place, DiffNode, NodeId, OpKind, Shape, Tape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch { op: &'static str, lhs: Shape, rhs: Shape },
    #[error("{op} expects {expected}, got {got}")]
    BadShape { op: &'static str, expected: &'static str, got: Shape },
    #[error("{op} takes {expected} inputs, got {got}")]
    Arity { op: &'static str, expected: usize, got: usize },
    #[error("non-finite input to {op}")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar root, got {0}")]
    NonScalarRoot(Shape),
    #[error("value of length {len} does not fit shape {shape}")]
    LengthMismatch { len: usize, shape: Shape },
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
    #[error("concat needs at least one input")]
    EmptyConcat,
    #[error("columns {start}..{end} out of bounds for {shape}")]
    SliceOutOfBounds { start: usize, end: usize, shape: Shape },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("graph builder is not deterministic: evaluated to {first} and then {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("lstm state: {0}")]
    BadState(&'static str),
}
