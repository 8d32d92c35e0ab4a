//! Complex sparse matrices, products and a direct LU solver.

mod csr;
mod lu;
mod ordering;

pub use csr::CsrMatrix;
pub use lu::{
    factorize, factorize_with, FactorOptions, Factorization, NearSingularPivot, PivotStats,
};
pub use ordering::{column_ordering, Ordering};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("entry ({row}, {col}) outside a {nrows}x{ncols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("invalid compressed-row layout")]
    InvalidLayout,
    #[error("matrix is not square ({nrows}x{ncols})")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("matrix of order {0} exceeds the 32-bit index range of the factorization")]
    TooLarge(usize),
    #[error("structurally singular: no candidate pivot at step {step} (column {column})")]
    StructurallySingular { step: usize, column: usize },
    #[error("numerically singular: zero pivot column at step {step} (column {column})")]
    ZeroPivot { step: usize, column: usize },
    #[error("ordering failed: {0}")]
    Ordering(String),
    #[error("coordinate format: {0}")]
    Parse(String),
}
