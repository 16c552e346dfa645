//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records primitive operations as they execute; [`Tape::backward`]
//! replays them in reverse from a scalar root. The primitive set is just large
//! enough for the whole pipeline: dense layers, activations, stiffness
//! assembly, the SPD linear solve, and constraint aggregation.

mod cholesky;
mod tape;

pub use cholesky::Cholesky;
pub use tape::{positive_pnorm, sigmoid, Activation, Gradients, Tape, Var};

/// Dense column-major matrix used for every tape value.
pub type Matrix = nalgebra::DMatrix<f64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op} is undefined at index {index} (value {value})")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    Singular { pivot: usize, value: f64 },
    #[error("backward root must be scalar, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("variable does not belong to this tape")]
    ForeignVariable,
}
