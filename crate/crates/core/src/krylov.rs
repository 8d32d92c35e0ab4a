//! Left-preconditioned full GMRES in a Euclidean or weighted inner product.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::operator::{dot, LinearOperator, OperatorError};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrylovError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("weight operator is not positive on a Krylov vector (<v, v> = {value})")]
    WeightNotPositive { value: f64 },
    #[error("Arnoldi breakdown at iteration {iteration} with relative residual {residual:e}")]
    Breakdown { iteration: usize, residual: f64 },
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Inner product in which the Arnoldi basis is orthonormalized.
#[derive(Clone, Copy)]
pub enum InnerProduct<'a> {
    Euclidean,
    /// `<u, v> = v^H W u` for a Hermitian positive definite `W`.
    Weighted(&'a dyn LinearOperator),
}

impl std::fmt::Debug for InnerProduct<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InnerProduct::Euclidean => write!(f, "Euclidean"),
            InnerProduct::Weighted(w) => write!(f, "Weighted(dim = {})", w.dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    Zero,
    /// Uniform `[0, 1)` real entries from a seeded generator.
    Random(u64),
    Given(Vec<Complex64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresConfig {
    /// Stop once `||r_j|| / ||r_0|| <= tolerance`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub start: Start,
    /// Also record the unpreconditioned residual `||b - A x_j|| / ||b - A x_0||`.
    pub track_true_residual: bool,
    /// Measure the loss of orthogonality of the stored basis on exit.
    pub check_orthogonality: bool,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 500,
            start: Start::Zero,
            track_true_residual: false,
            check_orthogonality: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresResult {
    pub solution: Vec<Complex64>,
    /// Number of Arnoldi steps.
    pub iterations: usize,
    /// Preconditioned residual norms in the chosen inner product, starting
    /// with `||r_0||`.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub final_relative_residual: f64,
    pub true_residual_history: Option<Vec<f64>>,
    /// `max |<v_i, v_j> - delta_ij|` over the stored basis.
    pub orthogonality_error: Option<f64>,
}

/// Start vector for a problem of size `n`.
pub fn start_vector(start: &Start, n: usize) -> Result<Vec<Complex64>, KrylovError> {
    match start {
        Start::Zero => Ok(vec![ZERO; n]),
        Start::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Ok((0..n).map(|_| Complex64::new(rng.random::<f64>(), 0.0)).collect())
        }
        Start::Given(x) => {
            if x.len() != n {
                return Err(KrylovError::DimensionMismatch {
                    expected: n,
                    found: x.len(),
                });
            }
            Ok(x.clone())
        }
    }
}

struct Gram<'a> {
    weight: Option<&'a dyn LinearOperator>,
}

impl Gram<'_> {
    /// `W x`, or `x` itself in the Euclidean case.
    fn image(&self, x: &[Complex64]) -> Result<Vec<Complex64>, KrylovError> {
        match self.weight {
            None => Ok(x.to_vec()),
            Some(w) => Ok(w.apply_vec(x)?),
        }
    }

    fn norm_with(&self, x: &[Complex64], wx: &[Complex64]) -> Result<f64, KrylovError> {
        let q = dot(x, wx);
        if !q.re.is_finite() || q.re < 0.0 || (q.re == 0.0 && x.iter().any(|v| *v != ZERO)) {
            return Err(KrylovError::WeightNotPositive { value: q.re });
        }
        Ok(q.re.sqrt())
    }

    /// Norm of a vector left after orthogonalizing one of norm `scale`;
    /// roundoff-level values are treated as zero.
    fn residual_norm(&self, x: &[Complex64], wx: &[Complex64], scale: f64) -> Result<f64, KrylovError> {
        let q = dot(x, wx);
        let floor = 1e-26 * scale * scale;
        if !q.re.is_finite() || q.re < -floor {
            return Err(KrylovError::WeightNotPositive { value: q.re });
        }
        Ok(q.re.max(0.0).sqrt())
    }
}

/// Solves `P A x = P b` by GMRES, with `P` the identity when absent.
pub fn gmres(
    a: &dyn LinearOperator,
    precond: Option<&dyn LinearOperator>,
    b: &[Complex64],
    inner: InnerProduct<'_>,
    config: &GmresConfig,
) -> Result<GmresResult, KrylovError> {
    let n = a.dim();
    if !(config.tolerance > 0.0) {
        return Err(KrylovError::InvalidConfig(format!("tolerance must be positive, got {}", config.tolerance)));
    }
    for len in [b.len(), precond.map_or(n, |p| p.dim())] {
        if len != n {
            return Err(KrylovError::DimensionMismatch { expected: n, found: len });
        }
    }
    let gram = Gram {
        weight: match inner {
            InnerProduct::Euclidean => None,
            InnerProduct::Weighted(w) => {
                if w.dim() != n {
                    return Err(KrylovError::DimensionMismatch { expected: n, found: w.dim() });
                }
                Some(w)
            }
        },
    };
    let apply_pa = |x: &[Complex64]| -> Result<Vec<Complex64>, KrylovError> {
        let ax = a.apply_vec(x)?;
        match precond {
            Some(p) => Ok(p.apply_vec(&ax)?),
            None => Ok(ax),
        }
    };

    let mut x = start_vector(&config.start, n)?;
    let ax0 = a.apply_vec(&x)?;
    let raw0: Vec<Complex64> = b.iter().zip(&ax0).map(|(bi, ai)| bi - ai).collect();
    let raw0_norm = crate::operator::norm2(&raw0);
    let r0 = match precond {
        Some(p) => p.apply_vec(&raw0)?,
        None => raw0,
    };
    let wr0 = gram.image(&r0)?;
    let beta = gram.norm_with(&r0, &wr0)?;

    let mut history = vec![beta];
    let mut true_history = config.track_true_residual.then(|| vec![1.0]);
    if beta == 0.0 {
        return Ok(GmresResult {
            solution: x,
            iterations: 0,
            residual_history: history,
            converged: true,
            final_relative_residual: 0.0,
            true_residual_history: true_history,
            orthogonality_error: config.check_orthogonality.then_some(0.0),
        });
    }

    let inv_beta = 1.0 / beta;
    let mut basis: Vec<Vec<Complex64>> = vec![r0.iter().map(|v| v * inv_beta).collect()];
    let mut wbasis: Vec<Vec<Complex64>> = Vec::new();
    if gram.weight.is_some() {
        wbasis.push(wr0.iter().map(|v| v * inv_beta).collect());
    }
    // Hessenberg columns after rotation (upper triangular part)
    let mut r_cols: Vec<Vec<Complex64>> = Vec::new();
    let mut cs: Vec<f64> = Vec::new();
    let mut sn: Vec<Complex64> = Vec::new();
    let mut g = vec![Complex64::new(beta, 0.0)];
    let mut converged = false;
    let mut iterations = 0;
    let max_it = config.max_iterations.min(n.max(1));

    for j in 0..max_it {
        let mut w = apply_pa(&basis[j])?;
        let ww = gram.image(&w)?;
        let before = gram.norm_with(&w, &ww)?;
        let mut h = vec![ZERO; j + 2];
        orthogonalize(&mut w, &basis, &wbasis, &mut h);
        let mut ww = gram.image(&w)?;
        let mut after = gram.residual_norm(&w, &ww, before)?;
        if after < before * std::f64::consts::FRAC_1_SQRT_2 {
            orthogonalize(&mut w, &basis, &wbasis, &mut h);
            ww = gram.image(&w)?;
            after = gram.residual_norm(&w, &ww, before)?;
        }
        h[j + 1] = Complex64::new(after, 0.0);
        iterations = j + 1;

        for i in 0..j {
            let (hi, hi1) = (h[i], h[i + 1]);
            h[i] = cs[i] * hi + sn[i] * hi1;
            h[i + 1] = -sn[i].conj() * hi + cs[i] * hi1;
        }
        let (c, s, rho) = givens(h[j], h[j + 1]);
        cs.push(c);
        sn.push(s);
        h[j] = rho;
        h[j + 1] = ZERO;
        let gj = g[j];
        g[j] = c * gj;
        g.push(-s.conj() * gj);
        h.truncate(j + 1);
        r_cols.push(h);

        let res = g[j + 1].norm();
        history.push(res);
        let rel = res / beta;
        if let Some(th) = true_history.as_mut() {
            let xj = update(&x, &basis, &r_cols, &g);
            let axj = a.apply_vec(&xj)?;
            let tr: f64 = b
                .iter()
                .zip(&axj)
                .map(|(bi, ai)| (bi - ai).norm_sqr())
                .sum::<f64>()
                .sqrt();
            th.push(if raw0_norm > 0.0 { tr / raw0_norm } else { tr });
        }
        if rel <= config.tolerance {
            converged = true;
            break;
        }
        if after <= 1e-14 * before || after == 0.0 {
            return Err(KrylovError::Breakdown {
                iteration: iterations,
                residual: rel,
            });
        }
        if j + 1 < max_it {
            let inv = 1.0 / after;
            basis.push(w.iter().map(|v| v * inv).collect());
            if gram.weight.is_some() {
                wbasis.push(ww.iter().map(|v| v * inv).collect());
            }
        }
    }

    x = update(&x, &basis, &r_cols, &g);
    let orthogonality_error = if config.check_orthogonality {
        Some(orthogonality(&basis, &wbasis))
    } else {
        None
    };
    Ok(GmresResult {
        solution: x,
        iterations,
        final_relative_residual: history.last().copied().unwrap_or(0.0) / beta,
        residual_history: history,
        converged,
        true_residual_history: true_history,
        orthogonality_error,
    })
}

/// One modified Gram-Schmidt sweep against the stored basis, accumulating
/// the coefficients into `h`.
fn orthogonalize(w: &mut [Complex64], basis: &[Vec<Complex64>], wbasis: &[Vec<Complex64>], h: &mut [Complex64]) {
    for (i, v) in basis.iter().enumerate() {
        let wv = if wbasis.is_empty() { v } else { &wbasis[i] };
        let coef = dot(wv, w);
        h[i] += coef;
        for (wk, vk) in w.iter_mut().zip(v) {
            *wk -= coef * vk;
        }
    }
}

/// Complex Givens rotation `[c, s; -conj(s), c]` zeroing `b` against `a`.
fn givens(a: Complex64, b: Complex64) -> (f64, Complex64, Complex64) {
    let (na, nb) = (a.norm(), b.norm());
    if nb == 0.0 {
        return (1.0, ZERO, a);
    }
    if na == 0.0 {
        return (0.0, b.conj() / nb, Complex64::new(nb, 0.0));
    }
    let r = na.hypot(nb);
    let phase = a / na;
    let c = na / r;
    let s = phase * b.conj() / r;
    (c, s, phase * r)
}

/// `x0 + V y` with `R y = g` solved by back substitution.
fn update(x0: &[Complex64], basis: &[Vec<Complex64>], r_cols: &[Vec<Complex64>], g: &[Complex64]) -> Vec<Complex64> {
    let k = r_cols.len();
    let mut y = vec![ZERO; k];
    for i in (0..k).rev() {
        let mut acc = g[i];
        for (jj, col) in r_cols.iter().enumerate().skip(i + 1) {
            acc -= col[i] * y[jj];
        }
        y[i] = acc / r_cols[i][i];
    }
    let mut x = x0.to_vec();
    for (yi, v) in y.iter().zip(basis) {
        for (xk, vk) in x.iter_mut().zip(v) {
            *xk += yi * vk;
        }
    }
    x
}

fn orthogonality(basis: &[Vec<Complex64>], wbasis: &[Vec<Complex64>]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..basis.len() {
        let wi = if wbasis.is_empty() { &basis[i] } else { &wbasis[i] };
        for (j, vj) in basis.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(wi, vj) - target).norm());
        }
    }
    worst
}
