//! Left-looking sparse LU with threshold partial pivoting.
//!
//! Each column of the (column-permuted) matrix is obtained by a sparse
//! triangular solve against the columns of `L` computed so far; the nonzero
//! pattern of the solve is found by a depth-first search in the graph of `L`,
//! so the work is proportional to the floating-point operations performed.
//! The pivot is the diagonal entry whenever its modulus is at least
//! `pivot_threshold` times the largest candidate in the column, otherwise the
//! largest candidate.

use num_complex::Complex64;

use super::ordering::{column_ordering, Ordering};
use super::{CsrMatrix, SparseError};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorOptions {
    pub ordering: Ordering,
    /// Relative threshold for keeping the diagonal pivot.
    pub pivot_threshold: f64,
    /// A pivot below `near_singular_tol * max|row|` is flagged.
    pub near_singular_tol: f64,
}

impl Default for FactorOptions {
    fn default() -> Self {
        Self {
            ordering: Ordering::Amd,
            pivot_threshold: 0.1,
            near_singular_tol: 1e-12,
        }
    }
}

/// Diagnostic raised when a pivot is tiny relative to its original row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearSingularPivot {
    /// Elimination step at which the smallest relative pivot occurred.
    pub step: usize,
    /// `|pivot| / max|row|` at that step.
    pub relative_pivot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotStats {
    pub min_abs: f64,
    pub max_abs: f64,
    /// Smallest `|pivot| / max|row of A|` over all steps.
    pub min_relative: f64,
    /// Steps where an off-diagonal row was chosen.
    pub off_diagonal: usize,
}

/// `P_r A P_c = L U` with `L` unit lower triangular.
///
/// Immutable after construction; solves borrow it shared and may run
/// concurrently.
#[derive(Debug, Clone)]
pub struct Factorization {
    n: usize,
    /// `col_perm[k]`: original column eliminated at step `k`.
    col_perm: Vec<usize>,
    /// `row_pinv[i]`: step at which original row `i` became pivotal.
    row_pinv: Vec<usize>,
    l_ptr: Vec<usize>,
    l_idx: Vec<u32>,
    l_val: Vec<Complex64>,
    u_ptr: Vec<usize>,
    u_idx: Vec<u32>,
    u_val: Vec<Complex64>,
    stats: PivotStats,
    near_singular: Option<NearSingularPivot>,
}

/// Factorizes a square matrix with the default options.
pub fn factorize(a: &CsrMatrix) -> Result<Factorization, SparseError> {
    factorize_with(a, &FactorOptions::default())
}

pub fn factorize_with(a: &CsrMatrix, opts: &FactorOptions) -> Result<Factorization, SparseError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(SparseError::NotSquare {
            nrows: n,
            ncols: a.ncols(),
        });
    }
    if n > u32::MAX as usize {
        return Err(SparseError::TooLarge(n));
    }
    let col_perm = column_ordering(a, opts.ordering)?;
    // column access: the rows of A^T are the columns of A
    let at = a.transpose();
    let row_max: Vec<f64> = (0..n)
        .map(|i| a.row(i).map(|(_, v)| v.norm()).fold(0.0, f64::max))
        .collect();

    let guess = 4 * a.nnz() + n;
    let mut l_ptr = Vec::with_capacity(n + 1);
    let mut l_idx: Vec<u32> = Vec::with_capacity(guess);
    let mut l_val: Vec<Complex64> = Vec::with_capacity(guess);
    let mut u_ptr = Vec::with_capacity(n + 1);
    let mut u_idx: Vec<u32> = Vec::with_capacity(guess);
    let mut u_val: Vec<Complex64> = Vec::with_capacity(guess);

    const UNSET: usize = usize::MAX;
    let mut pinv = vec![UNSET; n];
    let mut x = vec![ZERO; n];
    let mut mark = vec![usize::MAX; n];
    let mut stack: Vec<usize> = Vec::with_capacity(n);
    let mut pstack: Vec<usize> = Vec::with_capacity(n);
    let mut topo: Vec<usize> = Vec::with_capacity(n);

    let mut stats = PivotStats {
        min_abs: f64::INFINITY,
        max_abs: 0.0,
        min_relative: f64::INFINITY,
        off_diagonal: 0,
    };
    let mut near_singular: Option<NearSingularPivot> = None;

    for (k, &col) in col_perm.iter().enumerate() {
        l_ptr.push(l_val.len());
        u_ptr.push(u_val.len());

        // symbolic: rows reachable from the pattern of A(:, col) through L
        topo.clear();
        let col_rows = at.row_ptr()[col]..at.row_ptr()[col + 1];
        for &start in &at.col_idx()[col_rows.clone()] {
            if mark[start] == k {
                continue;
            }
            stack.clear();
            pstack.clear();
            stack.push(start);
            pstack.push(UNSET);
            while let Some(&j) = stack.last() {
                let top = stack.len() - 1;
                let step = pinv[j];
                if mark[j] != k {
                    mark[j] = k;
                    pstack[top] = if step == UNSET { 0 } else { l_ptr[step] + 1 };
                }
                let end = if step == UNSET { 0 } else { l_ptr[step + 1] };
                let mut descended = false;
                let mut p = pstack[top];
                while p < end {
                    let i = l_idx[p] as usize;
                    p += 1;
                    if mark[i] != k {
                        pstack[top] = p;
                        stack.push(i);
                        pstack.push(UNSET);
                        descended = true;
                        break;
                    }
                }
                if !descended {
                    stack.pop();
                    pstack.pop();
                    topo.push(j);
                }
            }
        }

        // numeric: x = L \ A(:, col) over the reach, in topological order
        for &i in &topo {
            x[i] = ZERO;
        }
        for p in col_rows {
            x[at.col_idx()[p]] = at.values()[p];
        }
        for &j in topo.iter().rev() {
            let step = pinv[j];
            if step == UNSET {
                continue;
            }
            let xj = x[j];
            if xj == ZERO {
                continue;
            }
            for p in (l_ptr[step] + 1)..l_ptr[step + 1] {
                x[l_idx[p] as usize] -= l_val[p] * xj;
            }
        }

        // pivot selection among rows not yet pivotal
        let mut ipiv = UNSET;
        let mut best = -1.0f64;
        for &i in topo.iter().rev() {
            if pinv[i] == UNSET {
                let m = x[i].norm();
                if m > best {
                    best = m;
                    ipiv = i;
                }
            } else {
                u_idx.push(pinv[i] as u32);
                u_val.push(x[i]);
            }
        }
        if ipiv == UNSET {
            return Err(SparseError::StructurallySingular { step: k, column: col });
        }
        if best <= 0.0 {
            return Err(SparseError::ZeroPivot { step: k, column: col });
        }
        if pinv[col] == UNSET && x[col].norm() >= opts.pivot_threshold * best {
            ipiv = col;
        } else {
            stats.off_diagonal += 1;
        }
        let pivot = x[ipiv];
        let pabs = pivot.norm();
        stats.min_abs = stats.min_abs.min(pabs);
        stats.max_abs = stats.max_abs.max(pabs);
        let rel = if row_max[ipiv] > 0.0 {
            pabs / row_max[ipiv]
        } else {
            f64::INFINITY
        };
        if rel < stats.min_relative {
            stats.min_relative = rel;
            if rel < opts.near_singular_tol {
                near_singular = Some(NearSingularPivot {
                    step: k,
                    relative_pivot: rel,
                });
            }
        }
        u_idx.push(k as u32);
        u_val.push(pivot);
        pinv[ipiv] = k;
        l_idx.push(ipiv as u32);
        l_val.push(Complex64::new(1.0, 0.0));
        let inv = pivot.inv();
        for &i in topo.iter().rev() {
            if pinv[i] == UNSET {
                l_idx.push(i as u32);
                l_val.push(x[i] * inv);
            }
            x[i] = ZERO;
        }
    }
    l_ptr.push(l_val.len());
    u_ptr.push(u_val.len());

    // rows of L in pivot order
    for r in l_idx.iter_mut() {
        *r = pinv[*r as usize] as u32;
    }
    l_idx.shrink_to_fit();
    l_val.shrink_to_fit();
    u_idx.shrink_to_fit();
    u_val.shrink_to_fit();
    if n == 0 {
        stats.min_abs = 0.0;
        stats.min_relative = 0.0;
    }

    Ok(Factorization {
        n,
        col_perm,
        row_pinv: pinv,
        l_ptr,
        l_idx,
        l_val,
        u_ptr,
        u_idx,
        u_val,
        stats,
        near_singular,
    })
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn pivot_stats(&self) -> PivotStats {
        self.stats
    }

    pub fn near_singular(&self) -> Option<NearSingularPivot> {
        self.near_singular
    }

    /// Stored entries of `L` (unit diagonal included) plus `U`.
    pub fn factor_nnz(&self) -> usize {
        self.l_val.len() + self.u_val.len()
    }

    pub fn col_perm(&self) -> &[usize] {
        &self.col_perm
    }

    /// `row_pinv[i]` is the elimination step of original row `i`.
    pub fn row_pinv(&self) -> &[usize] {
        &self.row_pinv
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[Complex64]) -> Result<Vec<Complex64>, SparseError> {
        let mut x = vec![ZERO; self.n];
        let mut work = vec![ZERO; self.n];
        self.solve_into(b, &mut x, &mut work)?;
        Ok(x)
    }

    /// Solves `A x = b` using caller-provided scratch of length `n`.
    pub fn solve_into(
        &self,
        b: &[Complex64],
        x: &mut [Complex64],
        work: &mut [Complex64],
    ) -> Result<(), SparseError> {
        self.check_dims(b, x, work)?;
        let y = work;
        for (i, &bi) in b.iter().enumerate() {
            y[self.row_pinv[i]] = bi;
        }
        for j in 0..self.n {
            let yj = y[j];
            if yj == ZERO {
                continue;
            }
            for p in (self.l_ptr[j] + 1)..self.l_ptr[j + 1] {
                y[self.l_idx[p] as usize] -= self.l_val[p] * yj;
            }
        }
        for j in (0..self.n).rev() {
            let last = self.u_ptr[j + 1] - 1;
            let yj = y[j] / self.u_val[last];
            y[j] = yj;
            if yj == ZERO {
                continue;
            }
            for p in self.u_ptr[j]..last {
                y[self.u_idx[p] as usize] -= self.u_val[p] * yj;
            }
        }
        for (k, &c) in self.col_perm.iter().enumerate() {
            x[c] = y[k];
        }
        Ok(())
    }

    /// Solves `A^H x = b`.
    pub fn solve_adjoint(&self, b: &[Complex64]) -> Result<Vec<Complex64>, SparseError> {
        let mut x = vec![ZERO; self.n];
        let mut work = vec![ZERO; self.n];
        self.solve_adjoint_into(b, &mut x, &mut work)?;
        Ok(x)
    }

    pub fn solve_adjoint_into(
        &self,
        b: &[Complex64],
        x: &mut [Complex64],
        work: &mut [Complex64],
    ) -> Result<(), SparseError> {
        self.check_dims(b, x, work)?;
        // A^H = P_c U^H L^H P_r
        let w = work;
        for (k, &c) in self.col_perm.iter().enumerate() {
            w[k] = b[c];
        }
        for j in 0..self.n {
            let last = self.u_ptr[j + 1] - 1;
            let mut acc = w[j];
            for p in self.u_ptr[j]..last {
                acc -= self.u_val[p].conj() * w[self.u_idx[p] as usize];
            }
            w[j] = acc / self.u_val[last].conj();
        }
        for j in (0..self.n).rev() {
            let mut acc = w[j];
            for p in (self.l_ptr[j] + 1)..self.l_ptr[j + 1] {
                acc -= self.l_val[p].conj() * w[self.l_idx[p] as usize];
            }
            w[j] = acc;
        }
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = w[self.row_pinv[i]];
        }
        Ok(())
    }

    /// One step of iterative refinement on top of a plain solve.
    pub fn solve_refined(
        &self,
        a: &CsrMatrix,
        b: &[Complex64],
    ) -> Result<Vec<Complex64>, SparseError> {
        let mut x = self.solve(b)?;
        let ax = a.spmv(&x)?;
        let r: Vec<Complex64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
        let dx = self.solve(&r)?;
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        Ok(x)
    }

    fn check_dims(
        &self,
        b: &[Complex64],
        x: &[Complex64],
        work: &[Complex64],
    ) -> Result<(), SparseError> {
        for len in [b.len(), x.len(), work.len()] {
            if len != self.n {
                return Err(SparseError::DimensionMismatch {
                    expected: self.n,
                    found: len,
                });
            }
        }
        Ok(())
    }

    /// Dense `L` and `U` in pivot coordinates, for residual checks on small
    /// problems.
    pub fn dense_factors(&self) -> (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
        let n = self.n;
        let mut l = vec![vec![ZERO; n]; n];
        let mut u = vec![vec![ZERO; n]; n];
        for j in 0..n {
            for p in self.l_ptr[j]..self.l_ptr[j + 1] {
                l[self.l_idx[p] as usize][j] = self.l_val[p];
            }
            for p in self.u_ptr[j]..self.u_ptr[j + 1] {
                u[self.u_idx[p] as usize][j] = self.u_val[p];
            }
        }
        (l, u)
    }
}
