//! Matrix-free linear operators on complex vectors.

use num_complex::Complex64;
use thiserror::Error;

use crate::sparsela::{CsrMatrix, Factorization, SparseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error("local solve on subdomain {id:?} failed: {source}")]
    LocalSolve {
        id: (usize, usize),
        source: SparseError,
    },
}

/// Square operator `y = T x`.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError>;

    fn apply_vec(&self, x: &[Complex64]) -> Result<Vec<Complex64>, OperatorError> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.dim()];
        self.apply(x, &mut y)?;
        Ok(y)
    }
}

/// Operator that can also apply its conjugate transpose.
pub trait AdjointOperator: LinearOperator {
    fn apply_adjoint(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError>;

    fn apply_adjoint_vec(&self, x: &[Complex64]) -> Result<Vec<Complex64>, OperatorError> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.dim()];
        self.apply_adjoint(x, &mut y)?;
        Ok(y)
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError> {
        Ok(self.spmv_into(x, y)?)
    }
}

impl AdjointOperator for CsrMatrix {
    fn apply_adjoint(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError> {
        Ok(self.spmv_adjoint_into(x, y)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError> {
        check(self.0, x.len())?;
        check(self.0, y.len())?;
        y.copy_from_slice(x);
        Ok(())
    }
}

impl AdjointOperator for Identity {
    fn apply_adjoint(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError> {
        self.apply(x, y)
    }
}

/// `A^{-1}` through a factorization.
#[derive(Debug, Clone, Copy)]
pub struct Inverse<'a>(pub &'a Factorization);

impl LinearOperator for Inverse<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError> {
        let mut work = vec![Complex64::new(0.0, 0.0); self.0.dim()];
        Ok(self.0.solve_into(x, y, &mut work)?)
    }
}

impl AdjointOperator for Inverse<'_> {
    fn apply_adjoint(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError> {
        let mut work = vec![Complex64::new(0.0, 0.0); self.0.dim()];
        Ok(self.0.solve_adjoint_into(x, y, &mut work)?)
    }
}

/// `outer * inner`.
#[derive(Debug, Clone, Copy)]
pub struct Product<'a, A: ?Sized, B: ?Sized> {
    pub outer: &'a A,
    pub inner: &'a B,
}

impl<'a, A: ?Sized, B: ?Sized> Product<'a, A, B> {
    pub fn new(outer: &'a A, inner: &'a B) -> Self {
        Self { outer, inner }
    }
}

impl<A: LinearOperator + ?Sized, B: LinearOperator + ?Sized> LinearOperator for Product<'_, A, B> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError> {
        let t = self.inner.apply_vec(x)?;
        self.outer.apply(&t, y)
    }
}

impl<A: AdjointOperator + ?Sized, B: AdjointOperator + ?Sized> AdjointOperator for Product<'_, A, B> {
    fn apply_adjoint(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError> {
        let t = self.outer.apply_adjoint_vec(x)?;
        self.inner.apply_adjoint(&t, y)
    }
}

fn check(expected: usize, found: usize) -> Result<(), OperatorError> {
    if expected != found {
        return Err(SparseError::DimensionMismatch { expected, found }.into());
    }
    Ok(())
}

/// `y^H x`.
pub fn dot(y: &[Complex64], x: &[Complex64]) -> Complex64 {
    y.iter().zip(x).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm2(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Materializes an operator column by column.
pub fn to_dense(op: &dyn LinearOperator) -> Result<Vec<Vec<Complex64>>, OperatorError> {
    let n = op.dim();
    let mut cols = Vec::with_capacity(n);
    let mut e = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        e[j] = Complex64::new(1.0, 0.0);
        cols.push(op.apply_vec(&e)?);
        e[j] = Complex64::new(0.0, 0.0);
    }
    // transpose to row-major
    Ok((0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect())
}
