//! Reverse-mode automatic differentiation over dense f64 arrays.
//!
//! A [`Tape`] records every forward operation of a training step and replays
//! them in reverse for gradients; [`grad_check`] verifies any scalar graph
//! against central finite differences. The tape is define-by-run: dropout
//! masks change the graph every step, so a fresh tape is built per step.

mod check;
mod tape;
mod tensor;

pub use check::{analytic_gradients, grad_check};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("index {index} out of range (size {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("contract violation: {msg}")]
    Contract { msg: String },
}
