//! Fill-reducing column orderings.

use super::{CsrMatrix, SparseError};

/// Column ordering applied before factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ordering {
    /// Approximate minimum degree on the pattern of `A + A^T`.
    #[default]
    Amd,
    /// Keep the input ordering.
    Natural,
}

/// Returns `perm` with `perm[k]` the original index placed at position `k`.
pub fn column_ordering(a: &CsrMatrix, ordering: Ordering) -> Result<Vec<usize>, SparseError> {
    let n = a.nrows();
    match ordering {
        Ordering::Natural => Ok((0..n).collect()),
        Ordering::Amd => {
            if n == 0 {
                return Ok(Vec::new());
            }
            // CSR arrays of A are the CSC arrays of A^T; the ordering works on
            // A + A^T so either orientation gives the same result. The diagonal
            // is always included, which the ordering ignores but which keeps
            // the pattern at least n entries long.
            let mut ap: Vec<i64> = Vec::with_capacity(n + 1);
            let mut ai: Vec<i64> = Vec::with_capacity(a.nnz() + n);
            ap.push(0);
            for i in 0..n {
                let cols = &a.col_idx()[a.row_ptr()[i]..a.row_ptr()[i + 1]];
                let mut placed = false;
                for &j in cols {
                    if !placed && j >= i {
                        if j != i {
                            ai.push(i as i64);
                        }
                        placed = true;
                    }
                    ai.push(j as i64);
                }
                if !placed {
                    ai.push(i as i64);
                }
                ap.push(ai.len() as i64);
            }
            let control = amd::Control::default();
            let (perm, _inv, _info) = amd::order(n as i64, &ap, &ai, &control)
                .map_err(|status| SparseError::Ordering(format!("{status:?}")))?;
            Ok(perm.into_iter().map(|p| p as usize).collect())
        }
    }
}
