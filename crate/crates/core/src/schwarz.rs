//! One-level additive Schwarz preconditioner
//! `B^{-1} = sum_l R_l^T A_l^{-1} R_l` with partition-of-unity weighted
//! restrictions.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::assemble::{assemble_local, AssembleError, BoundaryCondition, LocalSystem};
use crate::grid::{FineMesh, SubdomainDecomposition};
use crate::operator::{AdjointOperator, LinearOperator, OperatorError};
use crate::sparsela::{factorize, CsrMatrix, Factorization, NearSingularPivot, SparseError};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchwarzError {
    #[error("inconsistent local systems: {0}")]
    Mismatch(String),
    #[error("factorization of subdomain {id:?} failed: {source}")]
    Factorization {
        id: (usize, usize),
        source: SparseError,
    },
    #[error(transparent)]
    Assemble(#[from] AssembleError),
}

/// Factorized local problem together with its weighted restriction.
#[derive(Debug, Clone)]
pub struct LocalSolver {
    pub id: (usize, usize),
    /// Global node of each local unknown.
    pub global: Vec<usize>,
    /// Partition-of-unity weight of each local unknown.
    pub weights: Vec<f64>,
    pub matrix: CsrMatrix,
    pub factor: Factorization,
}

impl LocalSolver {
    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    /// `R_l v`.
    pub fn restrict(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.global.iter().zip(&self.weights).map(|(&p, &w)| v[p] * w).collect()
    }

    /// `w += R_l^T u`.
    pub fn prolong_add(&self, u: &[Complex64], w: &mut [Complex64]) {
        for ((&p, &wt), &ui) in self.global.iter().zip(&self.weights).zip(u) {
            w[p] += ui * wt;
        }
    }

    pub fn solve(&self, rhs: &[Complex64]) -> Result<Vec<Complex64>, OperatorError> {
        self.factor.solve(rhs).map_err(|source| OperatorError::LocalSolve { id: self.id, source })
    }

    pub fn solve_adjoint(&self, rhs: &[Complex64]) -> Result<Vec<Complex64>, OperatorError> {
        self.factor
            .solve_adjoint(rhs)
            .map_err(|source| OperatorError::LocalSolve { id: self.id, source })
    }
}

#[derive(Debug, Clone)]
pub struct SchwarzPreconditioner {
    n: usize,
    bc: BoundaryCondition,
    locals: Vec<LocalSolver>,
    near_singular: Vec<((usize, usize), NearSingularPivot)>,
}

impl SchwarzPreconditioner {
    /// Factorizes one local system per subdomain, in subdomain order.
    pub fn build(decomp: &SubdomainDecomposition, systems: Vec<LocalSystem>, n: usize) -> Result<Self, SchwarzError> {
        if systems.len() != decomp.len() {
            return Err(SchwarzError::Mismatch(format!(
                "{} local systems for {} subdomains",
                systems.len(),
                decomp.len()
            )));
        }
        let bc = systems.first().map(|s| s.bc).unwrap_or_default();
        for (sys, sd) in systems.iter().zip(decomp.subdomains()) {
            if sys.id != sd.id {
                return Err(SchwarzError::Mismatch(format!("system {:?} given for subdomain {:?}", sys.id, sd.id)));
            }
            if sys.bc != bc {
                return Err(SchwarzError::Mismatch("mixed boundary conditions".into()));
            }
            if sys.matrix.nrows() != sys.dofs.len() {
                return Err(SchwarzError::Mismatch(format!("subdomain {:?}: matrix and dof list differ", sys.id)));
            }
        }
        let locals: Vec<LocalSolver> = systems
            .into_par_iter()
            .zip(decomp.subdomains().par_iter())
            .map(|(sys, sd)| {
                let factor = factorize(&sys.matrix).map_err(|source| SchwarzError::Factorization { id: sys.id, source })?;
                Ok(LocalSolver {
                    id: sys.id,
                    global: sys.dofs.iter().map(|&q| sd.nodes[q]).collect(),
                    weights: sys.dofs.iter().map(|&q| sd.weights[q]).collect(),
                    matrix: sys.matrix,
                    factor,
                })
            })
            .collect::<Result<_, SchwarzError>>()?;
        let near_singular: Vec<_> = locals
            .iter()
            .filter_map(|l| l.factor.near_singular().map(|p| (l.id, p)))
            .collect();
        for (id, p) in &near_singular {
            log::warn!(
                "subdomain {id:?}: near-singular pivot {:.3e} at step {}",
                p.relative_pivot,
                p.step
            );
        }
        Ok(Self {
            n,
            bc,
            locals,
            near_singular,
        })
    }

    /// Assembles and factorizes the local systems of every subdomain.
    pub fn assemble(
        fine: &FineMesh,
        decomp: &SubdomainDecomposition,
        k: f64,
        eps: f64,
        eta: Complex64,
        bc: BoundaryCondition,
    ) -> Result<Self, SchwarzError> {
        let systems = decomp
            .subdomains()
            .par_iter()
            .map(|sd| assemble_local(fine, sd, k, eps, eta, bc))
            .collect::<Result<Vec<_>, _>>()?;
        Self::build(decomp, systems, fine.num_nodes())
    }

    pub fn locals(&self) -> &[LocalSolver] {
        &self.locals
    }

    pub fn boundary_condition(&self) -> BoundaryCondition {
        self.bc
    }

    /// Subdomains whose factorization flagged a tiny pivot.
    pub fn near_singular(&self) -> &[((usize, usize), NearSingularPivot)] {
        &self.near_singular
    }

    /// Largest relative residual `||A_l x - b|| / ||b||` of a random
    /// right-hand side over all local factorizations.
    pub fn max_local_residual(&self, seed: u64) -> Result<f64, OperatorError> {
        let mut worst = 0.0f64;
        for (idx, l) in self.locals.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ idx as u64);
            let b: Vec<Complex64> = (0..l.len())
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let x = l.solve(&b)?;
            let ax = l.matrix.spmv(&x)?;
            let r = ax.iter().zip(&b).map(|(a, c)| (a - c).norm_sqr()).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max(r / nb);
        }
        Ok(worst)
    }

    fn apply_impl(&self, x: &[Complex64], y: &mut [Complex64], adjoint: bool) -> Result<(), OperatorError> {
        for len in [x.len(), y.len()] {
            if len != self.n {
                return Err(SparseError::DimensionMismatch {
                    expected: self.n,
                    found: len,
                }
                .into());
            }
        }
        let parts: Vec<Vec<Complex64>> = self
            .locals
            .par_iter()
            .map(|l| {
                let r = l.restrict(x);
                if adjoint {
                    l.solve_adjoint(&r)
                } else {
                    l.solve(&r)
                }
            })
            .collect::<Result<_, _>>()?;
        y.fill(ZERO);
        for (l, u) in self.locals.iter().zip(&parts) {
            l.prolong_add(u, y);
        }
        Ok(())
    }
}

impl LinearOperator for SchwarzPreconditioner {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError> {
        self.apply_impl(x, y, false)
    }
}

impl AdjointOperator for SchwarzPreconditioner {
    fn apply_adjoint(&self, x: &[Complex64], y: &mut [Complex64]) -> Result<(), OperatorError> {
        self.apply_impl(x, y, true)
    }
}
