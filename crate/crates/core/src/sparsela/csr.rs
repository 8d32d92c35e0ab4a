//! Compressed sparse row storage for complex matrices.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use num_complex::Complex64;

use super::SparseError;

/// General complex sparse matrix in compressed row form.
///
/// Column indices are sorted and unique within each row. Explicit zeros are
/// allowed (assembly keeps the full pattern of a linear combination).
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Complex64>,
}

impl CsrMatrix {
    /// Builds a matrix from coordinate triplets. Duplicate entries are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, Complex64)],
    ) -> Result<Self, SparseError> {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(SparseError::IndexOutOfBounds {
                    row: i,
                    col: j,
                    nrows,
                    ncols,
                });
            }
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        // bucket by row, then sort each row by column and merge duplicates
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![Complex64::new(0.0, 0.0); triplets.len()];
        for &(i, j, v) in triplets {
            let slot = next[i];
            cols[slot] = j;
            vals[slot] = v;
            next[i] += 1;
        }

        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for i in 0..nrows {
            let (start, end) = (counts[i], counts[i + 1]);
            order.clear();
            order.extend(start..end);
            order.sort_by_key(|&p| cols[p]);
            let mut last: Option<usize> = None;
            for &p in &order {
                if last == Some(cols[p]) {
                    *values.last_mut().expect("merged entry exists") += vals[p];
                } else {
                    col_idx.push(cols[p]);
                    values.push(vals[p]);
                    last = Some(cols[p]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds a matrix from raw CSR arrays, validating the layout.
    pub fn from_raw(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<Complex64>,
    ) -> Result<Self, SparseError> {
        if row_ptr.len() != nrows + 1
            || row_ptr[0] != 0
            || row_ptr[nrows] != col_idx.len()
            || col_idx.len() != values.len()
        {
            return Err(SparseError::InvalidLayout);
        }
        for i in 0..nrows {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(SparseError::InvalidLayout);
            }
            let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&j| j >= ncols) {
                return Err(SparseError::InvalidLayout);
            }
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![Complex64::new(1.0, 0.0); n])
    }

    pub fn from_diagonal(diag: &[Complex64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Iterates over `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Entry lookup by binary search; zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// `y = A x`
    pub fn spmv(&self, x: &[Complex64]) -> Result<Vec<Complex64>, SparseError> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.nrows];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    pub fn spmv_into(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), SparseError> {
        if x.len() != self.ncols || y.len() != self.nrows {
            return Err(SparseError::DimensionMismatch {
                expected: self.ncols,
                found: x.len(),
            });
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            *yi = acc;
        }
        Ok(())
    }

    /// `y = A^H x` (conjugate transpose product).
    pub fn spmv_adjoint_into(
        &self,
        x: &[Complex64],
        y: &mut [Complex64],
    ) -> Result<(), SparseError> {
        if x.len() != self.nrows || y.len() != self.ncols {
            return Err(SparseError::DimensionMismatch {
                expected: self.nrows,
                found: x.len(),
            });
        }
        y.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (i, &xi) in x.iter().enumerate() {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[p]] += self.values[p].conj() * xi;
            }
        }
        Ok(())
    }

    /// Plain (non-conjugating) transpose.
    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![Complex64::new(0.0, 0.0); self.nnz()];
        for i in 0..self.nrows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                col_idx[next[j]] = i;
                values[next[j]] = self.values[p];
                next[j] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    /// Sparse linear combination `sum_t coeff_t * A_t`. The result pattern is
    /// the union of the input patterns.
    pub fn linear_combination(terms: &[(Complex64, &CsrMatrix)]) -> Result<Self, SparseError> {
        let first = terms.first().ok_or(SparseError::InvalidLayout)?.1;
        let (nrows, ncols) = (first.nrows, first.ncols);
        for (_, m) in terms {
            if m.nrows != nrows || m.ncols != ncols {
                return Err(SparseError::DimensionMismatch {
                    expected: nrows,
                    found: m.nrows,
                });
            }
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut marker = vec![usize::MAX; ncols];
        for i in 0..nrows {
            let start = col_idx.len();
            for (c, m) in terms {
                for p in m.row_ptr[i]..m.row_ptr[i + 1] {
                    let j = m.col_idx[p];
                    if marker[j] == usize::MAX || marker[j] < start {
                        marker[j] = col_idx.len();
                        col_idx.push(j);
                        values.push(*c * m.values[p]);
                    } else {
                        values[marker[j]] += *c * m.values[p];
                    }
                }
            }
            // restore sorted column order within the row
            let mut pairs: Vec<(usize, Complex64)> = col_idx[start..]
                .iter()
                .copied()
                .zip(values[start..].iter().copied())
                .collect();
            pairs.sort_by_key(|&(j, _)| j);
            for (k, (j, v)) in pairs.into_iter().enumerate() {
                col_idx[start + k] = j;
                values[start + k] = v;
            }
            for &j in &col_idx[start..] {
                marker[j] = usize::MAX;
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Principal submatrix on the given (sorted or unsorted) index list.
    pub fn principal_submatrix(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.ncols];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_i, &old_i) in keep.iter().enumerate() {
            for (j, v) in self.row(old_i) {
                if map[j] != usize::MAX {
                    triplets.push((new_i, map[j], v));
                }
            }
        }
        Self::from_triplets(keep.len(), keep.len(), &triplets)
            .expect("submatrix indices are in range")
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Dense row-major copy, intended for small test and oracle problems.
    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut dense = vec![vec![Complex64::new(0.0, 0.0); self.ncols]; self.nrows];
        for (i, row) in dense.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        dense
    }

    /// Writes the coordinate text format: a `rows cols nnz` header, then one
    /// `i j re im` line per stored entry with 0-based indices.
    ///
    /// Floats are written in shortest round-trip form, so
    /// [`CsrMatrix::read_coordinate`] reproduces the matrix bit for bit.
    pub fn write_coordinate<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        let mut line = String::new();
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                line.clear();
                let _ = write!(line, "{} {} {:?} {:?}", i, j, v.re, v.im);
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn read_coordinate<R: BufRead>(input: R) -> Result<Self, SparseError> {
        let mut lines = input.lines();
        let header = loop {
            match lines.next() {
                Some(line) => {
                    let line = line.map_err(|e| SparseError::Parse(e.to_string()))?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
                None => return Err(SparseError::Parse("missing header".into())),
            }
        };
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| SparseError::Parse(format!("bad header `{header}`: {e}")))?;
        let [nrows, ncols, nnz] = dims[..] else {
            return Err(SparseError::Parse(format!("bad header `{header}`")));
        };
        let mut triplets = Vec::with_capacity(nnz);
        for line in lines {
            let line = line.map_err(|e| SparseError::Parse(e.to_string()))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 4 {
                return Err(SparseError::Parse(format!("bad entry `{line}`")));
            }
            let parse_idx = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| SparseError::Parse(format!("bad index `{s}`: {e}")))
            };
            let parse_f = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| SparseError::Parse(format!("bad value `{s}`: {e}")))
            };
            triplets.push((
                parse_idx(fields[0])?,
                parse_idx(fields[1])?,
                Complex64::new(parse_f(fields[2])?, parse_f(fields[3])?),
            ));
        }
        if triplets.len() != nnz {
            return Err(SparseError::Parse(format!(
                "header announces {nnz} entries, found {}",
                triplets.len()
            )));
        }
        Self::from_triplets(nrows, ncols, &triplets)
    }
}
