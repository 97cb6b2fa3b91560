//! Dense SVD, nonsymmetric eigendecomposition and least squares.
//!
//! Everything here is generic over [`Scalar`](crate::scalar::Scalar) and works on
//! row-major [`DenseTensor`](crate::tensor::DenseTensor) matrices.

mod eig;
mod lstsq;
mod svd;

pub use eig::{eig, Eig};
pub use lstsq::{lstsq, lstsq_real, LstsqSolution};
pub use svd::{svd, truncate, Svd, TruncationRule};

use crate::tensor::ShapeError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("input contains non-finite entries")]
    NonFinite,
    #[error("expected a square matrix, got {0:?}")]
    NotSquare(Vec<usize>),
    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("invalid truncation rule: {0}")]
    InvalidRule(String),
    #[error("least squares needs rows >= cols, got {rows}x{cols}")]
    Underdetermined { rows: usize, cols: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}
