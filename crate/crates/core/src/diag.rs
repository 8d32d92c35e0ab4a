//! Numerical evaluation of the quantities appearing in the convergence
//! theory: the local stability constants `sigma_l`, the energy norm and the
//! field-of-values distance of the preconditioned matrix, the `Theta` bound
//! and the shift perturbation `||I - A_eps^{-1} A||`.
//!
//! All norms are taken in the energy inner product `<V, W>_D = W^* D V`
//! with `D = S + k^2 M`, unless a Euclidean report is requested.

use std::fmt::Write as _;
use std::io::{BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::assemble::{local_energy, AssembleError, BoundaryCondition, EtaRule, GlobalOperators};
use crate::grid::{FineMesh, Subdomain, SubdomainDecomposition};
use crate::operator::{AdjointOperator, LinearOperator, OperatorError, Product};
use crate::schwarz::{LocalSolver, SchwarzError, SchwarzPreconditioner};
use crate::sparsela::{factorize, CsrMatrix, Factorization, SparseError};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("problem size {n} exceeds the dense cap {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("{what} did not converge in {iterations} iterations (last estimate {estimate:.6e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        estimate: f64,
    },
    #[error("Theta is undefined for eps = 0 without a star-shapedness certificate")]
    ThetaUndefined,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("energy matrix factorization failed: {0}")]
    Energy(String),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Schwarz(#[from] SchwarzError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Hermitian positive definite inner product `<x, y> = y^* D x` together
/// with a factorization of `D`.
pub struct EnergySpace {
    d: CsrMatrix,
    factor: Factorization,
}

impl EnergySpace {
    pub fn new(d: &CsrMatrix) -> Result<Self, DiagError> {
        let factor = factorize(d).map_err(|e| DiagError::Energy(e.to_string()))?;
        Ok(Self { d: d.clone(), factor })
    }

    pub fn euclidean(n: usize) -> Result<Self, DiagError> {
        Self::new(&CsrMatrix::identity(n))
    }

    pub fn dim(&self) -> usize {
        self.d.nrows()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.d
    }

    /// `y^* D x`.
    pub fn inner(&self, x: &[Complex64], y: &[Complex64]) -> Result<Complex64, DiagError> {
        let dx = self.d.spmv(x)?;
        Ok(dot(y, &dx))
    }

    pub fn norm(&self, x: &[Complex64]) -> Result<f64, DiagError> {
        Ok(self.inner(x, x)?.re.max(0.0).sqrt())
    }

    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>, DiagError> {
        Ok(self.d.spmv(x)?)
    }

    fn solve(&self, b: &[Complex64]) -> Result<Vec<Complex64>, DiagError> {
        Ok(self.factor.solve(b)?)
    }

    /// `D^{-1} T^* D x`, the adjoint of `T` in this inner product.
    fn adjoint_of(&self, t: &dyn AdjointOperator, x: &[Complex64]) -> Result<Vec<Complex64>, DiagError> {
        let dx = self.apply(x)?;
        let y = t.apply_adjoint_vec(&dx)?;
        self.solve(&y)
    }
}

fn dot(y: &[Complex64], x: &[Complex64]) -> Complex64 {
    y.iter().zip(x).map(|(a, b)| a.conj() * b).sum()
}

fn axpy(a: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn random_vector(n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect()
}

// ---------------------------------------------------------------------------
// Theta

/// `Theta(eps, H, k)`: `k^2/|eps|`, or `min(1 + kH, k^2/|eps|)` when the
/// domain is certified star-shaped, with `Theta(0, H, k) = 1 + kH`.
pub fn theta_bound(eps: f64, h_ell: f64, k: f64, starshaped: bool) -> Result<f64, DiagError> {
    if !(k >= 1.0) || !(h_ell > 0.0) || !eps.is_finite() {
        return Err(DiagError::InvalidParameter(format!("k = {k}, H = {h_ell}, eps = {eps}")));
    }
    if eps == 0.0 {
        return if starshaped { Ok(1.0 + k * h_ell) } else { Err(DiagError::ThetaUndefined) };
    }
    let shifted = k * k / eps.abs();
    Ok(if starshaped { shifted.min(1.0 + k * h_ell) } else { shifted })
}

// ---------------------------------------------------------------------------
// Lanczos for the top of the spectrum of a self-adjoint operator

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Krylov dimension between restarts.
    pub krylov_dim: usize,
    pub max_restarts: usize,
    /// Residual tolerance relative to the spectral scale.
    pub tolerance: f64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            krylov_dim: 24,
            max_restarts: 200,
            tolerance: 1e-8,
        }
    }
}

/// Largest eigenvalue and a unit eigenvector of an operator self-adjoint in
/// the inner product of `space`, by explicitly restarted Lanczos with full
/// reorthogonalization.
fn lanczos_max<F>(
    space: &EnergySpace,
    mut op: F,
    start: &[Complex64],
    opts: &LanczosOptions,
) -> Result<(f64, Vec<Complex64>), DiagError>
where
    F: FnMut(&[Complex64]) -> Result<Vec<Complex64>, DiagError>,
{
    let n = space.dim();
    let m = opts.krylov_dim.clamp(1, n);
    let mut x = start.to_vec();
    let nx = space.norm(&x)?;
    if !(nx > 0.0) {
        x = random_vector(n, 0x51ed);
    }
    let mut theta = 0.0;
    for _ in 0..opts.max_restarts {
        let nx = space.norm(&x)?;
        x.iter_mut().for_each(|v| *v /= nx);
        let mut basis: Vec<Vec<Complex64>> = vec![x.clone()];
        let mut dbasis: Vec<Vec<Complex64>> = vec![space.apply(&x)?];
        let mut h = DMatrix::<Complex64>::zeros(m + 1, m);
        let mut steps = 0;
        let mut tail = 0.0;
        for j in 0..m {
            let mut w = op(&basis[j])?;
            for _pass in 0..2 {
                for i in 0..=j {
                    let c = dot(&dbasis[i], &w);
                    h[(i, j)] += c;
                    axpy(-c, &basis[i], &mut w);
                }
            }
            steps = j + 1;
            let beta = space.norm(&w)?;
            h[(j + 1, j)] = Complex64::new(beta, 0.0);
            tail = beta;
            let scale = (0..=j).map(|i| h[(i, i)].norm()).fold(0.0, f64::max).max(1e-300);
            if beta <= 1e-13 * scale || j + 1 == m || basis.len() == n {
                break;
            }
            w.iter_mut().for_each(|v| *v /= beta);
            dbasis.push(space.apply(&w)?);
            basis.push(w);
        }
        let mut t = DMatrix::<Complex64>::zeros(steps, steps);
        for i in 0..steps {
            for j in 0..steps {
                t[(i, j)] = (h[(i, j)] + h[(j, i)].conj()) * 0.5;
            }
        }
        let eig = SymmetricEigen::new(t);
        let (imax, &lmax) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty projection");
        let y = eig.eigenvectors.column(imax);
        let mut xn = vec![ZERO; n];
        for (i, b) in basis.iter().enumerate().take(steps) {
            axpy(y[i], b, &mut xn);
        }
        let scale = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        let resid = tail * y[steps - 1].norm();
        theta = lmax;
        x = xn;
        if resid <= opts.tolerance * scale || steps == n {
            let nx = space.norm(&x)?;
            x.iter_mut().for_each(|v| *v /= nx);
            return Ok((lmax, x));
        }
    }
    Err(DiagError::NotConverged {
        what: "Lanczos",
        iterations: opts.max_restarts,
        estimate: theta,
    })
}

// ---------------------------------------------------------------------------
// Norm and field of values

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FovMethod {
    /// Dense eigenproblems for very small systems, Lanczos otherwise.
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Copy)]
pub struct FovOptions {
    /// Number of sweep angles.
    pub angles: usize,
    /// Bisection levels around the angle closest to the origin.
    pub refine_levels: usize,
    pub dense_cap: usize,
    pub method: FovMethod,
    pub lanczos: LanczosOptions,
    pub seed: u64,
}

impl Default for FovOptions {
    fn default() -> Self {
        Self {
            angles: 720,
            refine_levels: 3,
            dense_cap: 4000,
            method: FovMethod::Auto,
            lanczos: LanczosOptions::default(),
            seed: 7,
        }
    }
}

const DENSE_AUTO_MAX: usize = 96;

#[derive(Debug, Clone, PartialEq)]
pub struct NormFov {
    pub norm: f64,
    /// Distance of the origin from the convex hull of the computed boundary
    /// points of the numerical range.
    pub fov_distance: f64,
    /// `max(0, -min_theta lambda_max)`: distance from the origin of the
    /// circumscribed polygon of supporting lines.
    pub fov_lower: f64,
    /// Boundary points `(theta, z)` of the numerical range.
    pub boundary: Vec<(f64, Complex64)>,
}

/// Operator norm and numerical-range distance from the origin of `t` in the
/// inner product `space`.
pub fn norm_and_fov(t: &dyn AdjointOperator, space: &EnergySpace, opts: &FovOptions) -> Result<NormFov, DiagError> {
    let n = t.dim();
    if space.dim() != n {
        return Err(SparseError::DimensionMismatch {
            expected: n,
            found: space.dim(),
        }
        .into());
    }
    if n > opts.dense_cap {
        return Err(DiagError::CapExceeded { n, cap: opts.dense_cap });
    }
    if opts.angles < 3 {
        return Err(DiagError::InvalidParameter("at least 3 sweep angles are needed".into()));
    }
    let dense = match opts.method {
        FovMethod::Dense => true,
        FovMethod::Lanczos => false,
        FovMethod::Auto => n <= DENSE_AUTO_MAX,
    };
    if dense {
        let w = DenseEnergyForm::new(t, space)?;
        let norm = w.norm();
        let sweep = sweep(opts, |theta, _| Ok(w.support(theta)))?;
        return Ok(finish(norm, sweep));
    }

    let mut gram = |x: &[Complex64]| -> Result<Vec<Complex64>, DiagError> {
        let tx = t.apply_vec(x)?;
        space.adjoint_of(t, &tx)
    };
    let (lam, _) = lanczos_max(space, &mut gram, &random_vector(n, opts.seed), &opts.lanczos)?;
    let norm = lam.max(0.0).sqrt();

    let mut warm = random_vector(n, opts.seed ^ 0x9e37);
    let sweep = sweep(opts, |theta, prev: Option<&Vec<Complex64>>| {
        let rot = Complex64::from_polar(1.0, theta);
        let op = |x: &[Complex64]| -> Result<Vec<Complex64>, DiagError> {
            let tx = t.apply_vec(x)?;
            let sx = space.adjoint_of(t, x)?;
            Ok(tx.iter().zip(&sx).map(|(a, b)| (rot * a + rot.conj() * b) * 0.5).collect())
        };
        if let Some(p) = prev {
            // a small random component keeps the Krylov space from being
            // trapped in an invariant subspace of the previous angle
            let pn = p.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let r = random_vector(n, theta.to_bits());
            let rn = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            for ((w, pi), ri) in warm.iter_mut().zip(p).zip(&r) {
                *w = pi + ri * (1e-2 * pn / rn);
            }
        }
        let (lmax, v) = lanczos_max(space, op, &warm, &opts.lanczos)?;
        let tv = t.apply_vec(&v)?;
        let z = space.inner(&tv, &v)?;
        Ok((lmax, z, v))
    })?;
    Ok(finish(norm, sweep))
}

struct SweepPoint {
    theta: f64,
    lmax: f64,
    z: Complex64,
}

/// Angle sweep plus bisection refinement around the angle whose supporting
/// line is farthest from the origin.
fn sweep<F>(opts: &FovOptions, mut eval: F) -> Result<Vec<SweepPoint>, DiagError>
where
    F: FnMut(f64, Option<&Vec<Complex64>>) -> Result<(f64, Complex64, Vec<Complex64>), DiagError>,
{
    let j_total = opts.angles;
    let step = std::f64::consts::TAU / j_total as f64;
    let mut pts = Vec::with_capacity(j_total + 2 * opts.refine_levels);
    let mut prev: Option<Vec<Complex64>> = None;
    let mut vecs = Vec::with_capacity(j_total);
    for j in 0..j_total {
        let theta = step * j as f64;
        let (lmax, z, v) = eval(theta, prev.as_ref())?;
        pts.push(SweepPoint { theta, lmax, z });
        prev = Some(v.clone());
        vecs.push(v);
    }
    let best = pts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.lmax.total_cmp(&b.1.lmax))
        .map(|(i, _)| i)
        .expect("nonempty sweep");
    let mut best_theta = pts[best].theta;
    let mut best_l = pts[best].lmax;
    let mut width = step;
    let mut start = vecs[best].clone();
    for _ in 0..opts.refine_levels {
        width *= 0.5;
        let mut cand = (best_theta, best_l, start.clone());
        for theta in [best_theta - width, best_theta + width] {
            let (lmax, z, v) = eval(theta, Some(&start))?;
            pts.push(SweepPoint { theta, lmax, z });
            if lmax < cand.1 {
                cand = (theta, lmax, v);
            }
        }
        best_theta = cand.0;
        best_l = cand.1;
        start = cand.2;
    }
    Ok(pts)
}

fn finish(norm: f64, pts: Vec<SweepPoint>) -> NormFov {
    let lower = pts.iter().map(|p| -p.lmax).fold(0.0, f64::max);
    let zs: Vec<Complex64> = pts.iter().map(|p| p.z).collect();
    let fov_distance = hull_distance(&zs);
    NormFov {
        norm,
        fov_distance,
        fov_lower: lower,
        boundary: pts.into_iter().map(|p| (p.theta, p.z)).collect(),
    }
}

/// Distance of the origin from the convex hull of `points` (0 if inside).
pub fn hull_distance(points: &[Complex64]) -> f64 {
    let mut p: Vec<(f64, f64)> = points.iter().map(|z| (z.re, z.im)).collect();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    p.dedup();
    if p.is_empty() {
        return f64::NAN;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(p.len() + 1);
    for pass in 0..2 {
        let base = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= base + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    let seg = |a: (f64, f64), b: (f64, f64)| {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 { (-(a.0 * dx + a.1 * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
        (a.0 + t * dx).hypot(a.1 + t * dy)
    };
    match hull.len() {
        0 => p[0].0.hypot(p[0].1),
        1 => hull[0].0.hypot(hull[0].1),
        2 => seg(hull[0], hull[1]),
        h => {
            let inside = (0..h).all(|i| cross(hull[i], hull[(i + 1) % h], (0.0, 0.0)) >= 0.0);
            if inside {
                0.0
            } else {
                (0..h).map(|i| seg(hull[i], hull[(i + 1) % h])).fold(f64::INFINITY, f64::min)
            }
        }
    }
}

/// `W = L^* T L^{-*}` for `D = L L^*`, materialized.
struct DenseEnergyForm {
    w: DMatrix<Complex64>,
}

impl DenseEnergyForm {
    fn new(t: &dyn AdjointOperator, space: &EnergySpace) -> Result<Self, DiagError> {
        let n = t.dim();
        let tm = materialize(t)?;
        let l = dense_cholesky(space.matrix())?;
        // X = L^* T, then W = X L^{-*}, i.e. L W^* = X^*
        let x = l.adjoint() * tm;
        let wt = l
            .solve_lower_triangular(&x.adjoint())
            .ok_or_else(|| DiagError::Energy("singular Cholesky factor".into()))?;
        let w = wt.adjoint();
        debug_assert_eq!(w.nrows(), n);
        Ok(Self { w })
    }

    fn norm(&self) -> f64 {
        self.w.singular_values().iter().cloned().fold(0.0, f64::max)
    }

    fn support(&self, theta: f64) -> (f64, Complex64, Vec<Complex64>) {
        let rot = Complex64::from_polar(1.0, theta);
        let a = &self.w * rot;
        let h = (&a + a.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(h);
        let (imax, &lmax) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        let v = eig.eigenvectors.column(imax).into_owned();
        let z = (v.adjoint() * &self.w * &v)[(0, 0)];
        (lmax, z, Vec::new())
    }
}

fn materialize(t: &dyn LinearOperator) -> Result<DMatrix<Complex64>, DiagError> {
    let n = t.dim();
    let mut m = DMatrix::<Complex64>::zeros(n, n);
    let mut e = vec![ZERO; n];
    for j in 0..n {
        e[j] = ONE;
        let col = t.apply_vec(&e)?;
        e[j] = ZERO;
        m.column_mut(j).copy_from_slice(&col);
    }
    Ok(m)
}

fn csr_to_dense(a: &CsrMatrix) -> DMatrix<Complex64> {
    let mut m = DMatrix::<Complex64>::zeros(a.nrows(), a.ncols());
    for i in 0..a.nrows() {
        for (j, v) in a.row(i) {
            m[(i, j)] += v;
        }
    }
    m
}

fn dense_cholesky(d: &CsrMatrix) -> Result<DMatrix<Complex64>, DiagError> {
    let chol = nalgebra::Cholesky::new(csr_to_dense(d))
        .ok_or_else(|| DiagError::Energy("energy matrix is not positive definite".into()))?;
    Ok(chol.l())
}

// ---------------------------------------------------------------------------
// sigma

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMethod {
    /// Dense oracle up to `dense_max` unknowns, power iteration beyond.
    Auto,
    Dense,
    Power,
}

#[derive(Debug, Clone, Copy)]
pub struct SigmaOptions {
    pub method: SigmaMethod,
    pub dense_max: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for SigmaOptions {
    fn default() -> Self {
        Self {
            method: SigmaMethod::Auto,
            dense_max: 2000,
            tolerance: 1e-6,
            max_iterations: 500,
            seed: 11,
        }
    }
}

/// `T_l = A_l^{-1} R_l A - R_l`, from global vectors to vectors on all
/// nodes of the subdomain closure.
struct LocalDefect<'a> {
    a: &'a CsrMatrix,
    local: &'a LocalSolver,
    sd: &'a Subdomain,
    /// Position in `sd.nodes` of each local unknown.
    pos: Vec<usize>,
}

impl<'a> LocalDefect<'a> {
    fn new(fine: &FineMesh, a: &'a CsrMatrix, local: &'a LocalSolver, sd: &'a Subdomain) -> Self {
        let pos = local
            .global
            .iter()
            .map(|&p| {
                let (i, j) = fine.node_ij(p);
                sd.local_index(i, j).expect("local unknown inside its subdomain")
            })
            .collect();
        Self { a, local, sd, pos }
    }

    fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>, DiagError> {
        let ax = self.a.spmv(x)?;
        let u = self.local.solve(&self.local.restrict(&ax))?;
        let mut out: Vec<Complex64> = self
            .sd
            .nodes
            .iter()
            .zip(&self.sd.weights)
            .map(|(&p, &w)| -x[p] * w)
            .collect();
        for (&q, ui) in self.pos.iter().zip(&u) {
            out[q] += ui;
        }
        Ok(out)
    }

    fn apply_adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>, DiagError> {
        let t: Vec<Complex64> = self.pos.iter().map(|&q| y[q]).collect();
        let s = self.local.solve_adjoint(&t)?;
        let mut g = vec![ZERO; self.a.nrows()];
        self.local.prolong_add(&s, &mut g);
        let mut z = vec![ZERO; self.a.ncols()];
        self.a.spmv_adjoint_into(&g, &mut z)?;
        for ((&p, &w), yi) in self.sd.nodes.iter().zip(&self.sd.weights).zip(y) {
            z[p] -= yi * w;
        }
        Ok(z)
    }
}

/// `sigma_l = ||A_l^{-1} R_l A - R_l||`, measured from the global energy
/// norm to the energy norm of the subdomain closure, for every subdomain.
pub fn estimate_sigma(
    fine: &FineMesh,
    decomp: &SubdomainDecomposition,
    a: &CsrMatrix,
    precond: &SchwarzPreconditioner,
    space: &EnergySpace,
    k: f64,
    opts: &SigmaOptions,
) -> Result<Vec<f64>, DiagError> {
    let n = a.nrows();
    if precond.locals().len() != decomp.len() || space.dim() != n {
        return Err(DiagError::InvalidParameter("decomposition, operator and preconditioner differ".into()));
    }
    let dense = match opts.method {
        SigmaMethod::Dense => true,
        SigmaMethod::Power => false,
        SigmaMethod::Auto => n <= opts.dense_max,
    };
    let l_global = if dense { Some(dense_cholesky(space.matrix())?) } else { None };
    decomp
        .subdomains()
        .par_iter()
        .zip(precond.locals().par_iter())
        .enumerate()
        .map(|(idx, (sd, local))| {
            let defect = LocalDefect::new(fine, a, local, sd);
            let d_loc = local_energy(fine, sd, k);
            match &l_global {
                Some(l) => sigma_dense(&defect, &d_loc, l),
                None => sigma_power(&defect, &d_loc, space, opts, idx as u64),
            }
        })
        .collect()
}

fn sigma_dense(defect: &LocalDefect, d_loc: &CsrMatrix, l: &DMatrix<Complex64>) -> Result<f64, DiagError> {
    let n = l.nrows();
    let nl = d_loc.nrows();
    let mut t = DMatrix::<Complex64>::zeros(nl, n);
    let mut e = vec![ZERO; n];
    for j in 0..n {
        e[j] = ONE;
        let col = defect.apply(&e)?;
        e[j] = ZERO;
        t.column_mut(j).copy_from_slice(&col);
    }
    let ll = dense_cholesky(d_loc)?;
    let x = ll.adjoint() * t;
    let yt = l
        .solve_lower_triangular(&x.adjoint())
        .ok_or_else(|| DiagError::Energy("singular Cholesky factor".into()))?;
    Ok(yt.singular_values().iter().cloned().fold(0.0, f64::max))
}

fn sigma_power(
    defect: &LocalDefect,
    d_loc: &CsrMatrix,
    space: &EnergySpace,
    opts: &SigmaOptions,
    stream: u64,
) -> Result<f64, DiagError> {
    let n = space.dim();
    let mut x = random_vector(n, opts.seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9)));
    let mut prev = f64::NAN;
    let mut est = 0.0;
    for _ in 0..opts.max_iterations {
        let nx = space.norm(&x)?;
        x.iter_mut().for_each(|v| *v /= nx);
        let tx = defect.apply(&x)?;
        let dtx = d_loc.spmv(&tx)?;
        est = dot(&tx, &dtx).re.max(0.0).sqrt();
        if est < 1e-10 {
            return Ok(est);
        }
        if (est - prev).abs() <= opts.tolerance * est {
            return Ok(est);
        }
        prev = est;
        let g = defect.apply_adjoint(&dtx)?;
        x = space.solve(&g)?;
    }
    Err(DiagError::NotConverged {
        what: "sigma power iteration",
        iterations: opts.max_iterations,
        estimate: est,
    })
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub k: f64,
    pub eps: f64,
    pub n: usize,
    pub coarse_cells: usize,
    pub sigma_per_subdomain: Vec<f64>,
    pub sigma: f64,
    pub norm_dk: f64,
    pub fov_distance: f64,
    /// Supporting-line lower envelope of `fov_distance`.
    pub fov_lower: f64,
    pub lambda: usize,
    pub theoretical_upper: f64,
    pub theoretical_lower: f64,
    /// Same quantities in the Euclidean inner product, when requested.
    pub norm_euclidean: Option<f64>,
    pub fov_euclidean: Option<f64>,
}

impl TheoryReport {
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "eps = {}", self.eps);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "coarse_cells = {}", self.coarse_cells);
        let sig: Vec<String> = self.sigma_per_subdomain.iter().map(|v| format!("{v:.6e}")).collect();
        let _ = writeln!(s, "sigma_per_subdomain = {}", sig.join(" "));
        let _ = writeln!(s, "sigma = {:.6e}", self.sigma);
        let _ = writeln!(s, "norm_dk = {:.6e}", self.norm_dk);
        let _ = writeln!(s, "fov_distance = {:.6e}", self.fov_distance);
        let _ = writeln!(s, "fov_lower = {:.6e}", self.fov_lower);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "theoretical_upper = {:.6e}", self.theoretical_upper);
        let _ = writeln!(s, "theoretical_lower = {:.6e}", self.theoretical_lower);
        if let Some(v) = self.norm_euclidean {
            let _ = writeln!(s, "norm_euclidean = {v:.6e}");
        }
        if let Some(v) = self.fov_euclidean {
            let _ = writeln!(s, "fov_euclidean = {v:.6e}");
        }
        s
    }

    pub const CSV_HEADER: [&'static str; 14] = [
        "k",
        "eps",
        "n",
        "coarse_cells",
        "sigma_per_subdomain",
        "sigma",
        "norm_dk",
        "fov_distance",
        "fov_lower",
        "lambda",
        "theoretical_upper",
        "theoretical_lower",
        "norm_euclidean",
        "fov_euclidean",
    ];

    fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.k.to_string(),
            self.eps.to_string(),
            self.n.to_string(),
            self.coarse_cells.to_string(),
            self.sigma_per_subdomain.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"),
            self.sigma.to_string(),
            self.norm_dk.to_string(),
            self.fov_distance.to_string(),
            self.fov_lower.to_string(),
            self.lambda.to_string(),
            self.theoretical_upper.to_string(),
            self.theoretical_lower.to_string(),
            opt(self.norm_euclidean),
            opt(self.fov_euclidean),
        ]
    }

    pub fn write_csv<W: Write>(reports: &[TheoryReport], out: W) -> Result<(), DiagError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in reports {
            w.write_record(r.csv_record())?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TheoryOptions {
    pub eta: EtaRule,
    pub bc: BoundaryCondition,
    pub sigma: SigmaOptions,
    pub fov: FovOptions,
    /// Estimate the local constants `sigma_l`.
    pub with_sigma: bool,
    pub operator: OperatorQuantities,
    pub euclidean: bool,
}

/// What to measure on the preconditioned operator itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorQuantities {
    Nothing,
    Norm,
    NormAndFov,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        Self {
            eta: EtaRule::default(),
            bc: BoundaryCondition::Impedance,
            sigma: SigmaOptions::default(),
            fov: FovOptions::default(),
            with_sigma: true,
            operator: OperatorQuantities::NormAndFov,
            euclidean: false,
        }
    }
}

/// Full theory report for one decomposition and one shift, with the same
/// shift in the problem and in the local solves.
pub fn theory_report(
    fine: &FineMesh,
    decomp: &SubdomainDecomposition,
    k: f64,
    eps: f64,
    opts: &TheoryOptions,
) -> Result<TheoryReport, DiagError> {
    let n = fine.num_nodes();
    if n > opts.fov.dense_cap {
        return Err(DiagError::CapExceeded { n, cap: opts.fov.dense_cap });
    }
    let eta = opts.eta.eta(k, eps);
    let ops = GlobalOperators::assemble(fine, k, eps, eta)?;
    let precond = SchwarzPreconditioner::assemble(fine, decomp, k, eps, eta, opts.bc)?;
    let space = EnergySpace::new(&ops.energy)?;
    let sigma_per_subdomain = if opts.with_sigma {
        estimate_sigma(fine, decomp, &ops.system, &precond, &space, k, &opts.sigma)?
    } else {
        Vec::new()
    };
    let sigma = if opts.with_sigma {
        sigma_per_subdomain.iter().cloned().fold(0.0, f64::max)
    } else {
        f64::NAN
    };
    let t = Product::new(&precond, &ops.system);
    let measure = |space: &EnergySpace| -> Result<(f64, f64, f64), DiagError> {
        Ok(match opts.operator {
            OperatorQuantities::Nothing => (f64::NAN, f64::NAN, f64::NAN),
            OperatorQuantities::Norm => (operator_norm(&t, space, &opts.fov)?, f64::NAN, f64::NAN),
            OperatorQuantities::NormAndFov => {
                let r = norm_and_fov(&t, space, &opts.fov)?;
                (r.norm, r.fov_distance, r.fov_lower)
            }
        })
    };
    let (norm_dk, fov_distance, fov_lower) = measure(&space)?;
    let (norm_euclidean, fov_euclidean) = if opts.euclidean {
        let (nrm, fov, _) = measure(&EnergySpace::euclidean(n)?)?;
        (Some(nrm), Some(fov))
    } else {
        (None, None)
    };
    let lambda = decomp.lambda();
    let lam = lambda as f64;
    Ok(TheoryReport {
        k,
        eps,
        n,
        coarse_cells: decomp.coarse_cells(),
        sigma_per_subdomain,
        sigma,
        norm_dk,
        fov_distance,
        fov_lower,
        lambda,
        theoretical_upper: lam * (1.0 + sigma),
        theoretical_lower: 1.0 / lam - std::f64::consts::SQRT_2 * sigma * lam,
        norm_euclidean,
        fov_euclidean,
    })
}

/// Operator norm of `t` in the inner product of `space`.
pub fn operator_norm(t: &dyn AdjointOperator, space: &EnergySpace, opts: &FovOptions) -> Result<f64, DiagError> {
    let n = t.dim();
    if n > opts.dense_cap {
        return Err(DiagError::CapExceeded { n, cap: opts.dense_cap });
    }
    let dense = match opts.method {
        FovMethod::Dense => true,
        FovMethod::Lanczos => false,
        FovMethod::Auto => n <= DENSE_AUTO_MAX,
    };
    if dense {
        return Ok(DenseEnergyForm::new(t, space)?.norm());
    }
    let gram = |x: &[Complex64]| -> Result<Vec<Complex64>, DiagError> {
        let tx = t.apply_vec(x)?;
        space.adjoint_of(t, &tx)
    };
    let (lam, _) = lanczos_max(space, gram, &random_vector(n, opts.seed), &opts.lanczos)?;
    Ok(lam.max(0.0).sqrt())
}

/// `I - A_eps^{-1} A` for factorized `A_eps`.
struct ShiftDefect<'a> {
    a: &'a CsrMatrix,
    factor: &'a Factorization,
}

impl LinearOperator for ShiftDefect<'_> {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError> {
        let ax = self.a.spmv(x)?;
        let z = self.factor.solve(&ax)?;
        for ((yi, xi), zi) in y.iter_mut().zip(x).zip(&z) {
            *yi = xi - zi;
        }
        Ok(())
    }
}

impl AdjointOperator for ShiftDefect<'_> {
    fn apply_adjoint(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError> {
        let z = self.factor.solve_adjoint(x)?;
        let mut w = vec![ZERO; x.len()];
        self.a.spmv_adjoint_into(&z, &mut w)?;
        for ((yi, xi), wi) in y.iter_mut().zip(x).zip(&w) {
            *yi = xi - wi;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    pub k: f64,
    pub eps: Vec<f64>,
    /// `||I - A_eps^{-1} A||_D`.
    pub norms: Vec<f64>,
    /// Least-squares slope of `norms` against `|eps|/k` through the origin.
    pub k_fit: f64,
    /// Relative residual `||norms - k_fit |eps|/k|| / ||norms||` of the fit.
    pub fit_residual: f64,
    /// `max norms / (|eps|/k)` over the nonzero shifts.
    pub k_sup: f64,
    /// `C1(eps) = ||B_eps^{-1} A_eps||_D`.
    pub c1: Vec<f64>,
    /// `C2(eps)`: field-of-values distance of `B_eps^{-1} A_eps`.
    pub c2: Vec<f64>,
    /// `C1 (1 + K |eps|/k)` with `K = k_sup`.
    pub upper_bound: Vec<f64>,
    /// `C2 - K C1 |eps|/k` with `K = k_sup`.
    pub lower_bound: Vec<f64>,
    /// Directly measured `||B_eps^{-1} A||_D`.
    pub measured_norm: Vec<f64>,
    /// Directly measured field-of-values distance of `B_eps^{-1} A`.
    pub measured_fov: Vec<f64>,
}

impl PerturbationReport {
    pub fn to_key_value(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "eps = {}", list(&self.eps));
        let _ = writeln!(s, "norms = {}", list(&self.norms));
        let _ = writeln!(s, "k_fit = {:.6e}", self.k_fit);
        let _ = writeln!(s, "fit_residual = {:.6e}", self.fit_residual);
        let _ = writeln!(s, "k_sup = {:.6e}", self.k_sup);
        let _ = writeln!(s, "c1 = {}", list(&self.c1));
        let _ = writeln!(s, "c2 = {}", list(&self.c2));
        let _ = writeln!(s, "upper_bound = {}", list(&self.upper_bound));
        let _ = writeln!(s, "lower_bound = {}", list(&self.lower_bound));
        let _ = writeln!(s, "measured_norm = {}", list(&self.measured_norm));
        let _ = writeln!(s, "measured_fov = {}", list(&self.measured_fov));
        s
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DiagError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "k",
            "eps",
            "norm",
            "c1",
            "c2",
            "upper_bound",
            "lower_bound",
            "measured_norm",
            "measured_fov",
        ])?;
        for i in 0..self.eps.len() {
            w.write_record([
                self.k.to_string(),
                self.eps[i].to_string(),
                self.norms[i].to_string(),
                self.c1[i].to_string(),
                self.c2[i].to_string(),
                self.upper_bound[i].to_string(),
                self.lower_bound[i].to_string(),
                self.measured_norm[i].to_string(),
                self.measured_fov[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Least-squares slope through the origin and its relative residual.
pub fn fit_through_origin(x: &[f64], y: &[f64]) -> (f64, f64) {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|b| b * b).sum::<f64>().sqrt();
    (slope, if ny > 0.0 { res / ny } else { 0.0 })
}

/// Norms `||I - A_eps^{-1} A||_D` for the given shifts, where `A` is the
/// unshifted operator with `eta = k`.
pub fn perturbation_norms(fine: &FineMesh, k: f64, eps_list: &[f64], opts: &FovOptions) -> Result<Vec<f64>, DiagError> {
    let n = fine.num_nodes();
    if n > opts.dense_cap {
        return Err(DiagError::CapExceeded { n, cap: opts.dense_cap });
    }
    let eta0 = Complex64::new(k, 0.0);
    let base = GlobalOperators::assemble(fine, k, 0.0, eta0)?;
    let space = EnergySpace::new(&base.energy)?;
    eps_list
        .iter()
        .map(|&eps| {
            if eps == 0.0 {
                return Ok(0.0);
            }
            let a_eps = crate::assemble::combine(&base.forms, k, eps, eta0)?;
            let factor = factorize(&a_eps)?;
            let op = ShiftDefect {
                a: &base.system,
                factor: &factor,
            };
            operator_norm(&op, &space, opts)
        })
        .collect()
}

/// Shift scan with the composite bounds `C1 (1 + K eps/k)` and
/// `C2 - K C1 eps/k` for the preconditioner of `decomp`.
pub fn perturbation_scan(
    fine: &FineMesh,
    decomp: &SubdomainDecomposition,
    k: f64,
    eps_list: &[f64],
    opts: &FovOptions,
) -> Result<PerturbationReport, DiagError> {
    if !eps_list.contains(&0.0) {
        return Err(DiagError::InvalidParameter("the shift list must include 0".into()));
    }
    let norms = perturbation_norms(fine, k, eps_list, opts)?;
    let x: Vec<f64> = eps_list.iter().map(|e| e.abs() / k).collect();
    let (k_fit, fit_residual) = fit_through_origin(&x, &norms);
    let k_sup = x
        .iter()
        .zip(&norms)
        .filter(|(xi, _)| **xi > 0.0)
        .map(|(xi, ni)| ni / xi)
        .fold(0.0, f64::max);

    let eta0 = Complex64::new(k, 0.0);
    let base = GlobalOperators::assemble(fine, k, 0.0, eta0)?;
    let space = EnergySpace::new(&base.energy)?;
    let (mut c1, mut c2, mut upper, mut lower, mut mnorm, mut mfov) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for (&eps, &xi) in eps_list.iter().zip(&x) {
        let a_eps = crate::assemble::combine(&base.forms, k, eps, eta0)?;
        let precond = SchwarzPreconditioner::assemble(fine, decomp, k, eps, eta0, BoundaryCondition::Impedance)?;
        let shifted = norm_and_fov(&Product::new(&precond, &a_eps), &space, opts)?;
        let direct = norm_and_fov(&Product::new(&precond, &base.system), &space, opts)?;
        c1.push(shifted.norm);
        c2.push(shifted.fov_distance);
        upper.push(shifted.norm * (1.0 + k_sup * xi));
        lower.push(shifted.fov_distance - k_sup * shifted.norm * xi);
        mnorm.push(direct.norm);
        mfov.push(direct.fov_distance);
    }
    Ok(PerturbationReport {
        k,
        eps: eps_list.to_vec(),
        norms,
        k_fit,
        fit_residual,
        k_sup,
        c1,
        c2,
        upper_bound: upper,
        lower_bound: lower,
        measured_norm: mnorm,
        measured_fov: mfov,
    })
}

/// Reads a matrix in the coordinate text format.
pub fn load_matrix(path: &Path) -> Result<CsrMatrix, DiagError> {
    let f = std::fs::File::open(path)?;
    Ok(CsrMatrix::read_coordinate(BufReader::new(f))?)
}

/// Norm and field of values of `B^{-1} A` for matrices imported from files,
/// with `B^{-1}` given through a factorization of `b`.
pub fn norm_and_fov_imported(
    a: &CsrMatrix,
    b: &CsrMatrix,
    d: &CsrMatrix,
    opts: &FovOptions,
) -> Result<NormFov, DiagError> {
    let factor = factorize(b)?;
    let inv = crate::operator::Inverse(&factor);
    let space = EnergySpace::new(d)?;
    norm_and_fov(&Product::new(&inv, a), &space, opts)
}
