//! Dense f64 arrays and the reverse-mode differentiation engine.
//!
//! Desk-scale sizes make 64-bit floats affordable everywhere, and the
//! gradient checks demand the precision. Arrays are immutable after
//! construction; differentiable computation goes through [`graph::Graph`].

mod array;
pub mod gradcheck;
pub mod graph;

#[cfg(test)]
mod tests;

pub use array::NumArray;
pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, NodeId};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

pub(crate) fn shape_err(op: &'static str, details: String) -> NumericsError {
    NumericsError::ShapeMismatch { op, details }
}

/// Rejects NaN/Inf right where they appear instead of letting them propagate.
pub(crate) fn check_finite(data: &[f64], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite { op })
    }
}
