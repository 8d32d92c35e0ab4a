//! Independent oracles shared by the integration tests and the acceptance
//! harness.

#![allow(dead_code)]

use helmholtz_dd::assemble::{assemble_forms, assemble_local, BoundaryCondition, GlobalOperators};
use helmholtz_dd::grid::{build_grids, build_grids_fixed, FineMesh, GridOptions, SubdomainDecomposition};
use helmholtz_dd::krylov::{gmres, GmresConfig, InnerProduct, Start};
use helmholtz_dd::operator::LinearOperator;
use helmholtz_dd::schwarz::SchwarzPreconditioner;
use helmholtz_dd::sparsela::factorize;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_vector(n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect()
}

pub fn rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    num / den
}

// Dunavant degree-5 rule on the reference triangle, weights summing to 1.
const TRI_RULE: [(f64, f64, f64); 7] = [
    (1.0 / 3.0, 1.0 / 3.0, 0.225),
    (0.059_715_871_789_770, 0.470_142_064_105_115, 0.132_394_152_788_506),
    (0.470_142_064_105_115, 0.059_715_871_789_770, 0.132_394_152_788_506),
    (0.470_142_064_105_115, 0.470_142_064_105_115, 0.132_394_152_788_506),
    (0.797_426_985_353_087, 0.101_286_507_323_456, 0.125_939_180_544_827),
    (0.101_286_507_323_456, 0.797_426_985_353_087, 0.125_939_180_544_827),
    (0.101_286_507_323_456, 0.101_286_507_323_456, 0.125_939_180_544_827),
];

fn tri_integrate(p: &[[f64; 2]; 3], f: impl Fn(f64, f64) -> f64) -> f64 {
    let e1 = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
    let e2 = [p[2][0] - p[0][0], p[2][1] - p[0][1]];
    let jac = (e1[0] * e2[1] - e1[1] * e2[0]).abs();
    0.5 * jac
        * TRI_RULE
            .iter()
            .map(|&(s, t, w)| w * f(p[0][0] + s * e1[0] + t * e2[0], p[0][1] + s * e1[1] + t * e2[1]))
            .sum::<f64>()
}

/// Largest entry difference between the assembled stiffness, mass and
/// boundary mass matrices and quadrature of the nodal basis on an
/// `m x m` mesh.
pub fn element_oracle_error(m: usize) -> f64 {
    let fine = FineMesh::new(m).unwrap();
    let n = fine.num_nodes();
    let forms = assemble_forms(&fine);
    let mut s = DMatrix::<f64>::zeros(n, n);
    let mut ms = DMatrix::<f64>::zeros(n, n);
    for tri in fine.triangles() {
        let p = [fine.coords(tri[0]), fine.coords(tri[1]), fine.coords(tri[2])];
        let v = Matrix3::from_fn(|r, c| match c {
            0 => 1.0,
            1 => p[r][0],
            _ => p[r][1],
        });
        let cf = v.try_inverse().unwrap().transpose();
        let phi = |i: usize, x: f64, y: f64| cf.row(i).dot(&Vector3::new(1.0, x, y).transpose());
        for a in 0..3 {
            for b in 0..3 {
                let g = cf[(a, 1)] * cf[(b, 1)] + cf[(a, 2)] * cf[(b, 2)];
                s[(tri[a], tri[b])] += tri_integrate(&p, |_, _| g);
                ms[(tri[a], tri[b])] += tri_integrate(&p, |x, y| phi(a, x, y) * phi(b, x, y));
            }
        }
    }
    let gl = [(-(0.6f64).sqrt(), 5.0 / 9.0), (0.0, 8.0 / 9.0), ((0.6f64).sqrt(), 5.0 / 9.0)];
    let mut nb = DMatrix::<f64>::zeros(n, n);
    for e in fine.boundary_edges() {
        let [p, q] = e.nodes;
        let (a, b) = (fine.coords(p), fine.coords(q));
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        for &(t, w) in &gl {
            let s1 = 0.5 * (1.0 + t);
            let vals = [(p, 1.0 - s1), (q, s1)];
            for &(i, vi) in &vals {
                for &(j, vj) in &vals {
                    nb[(i, j)] += 0.5 * len * w * vi * vj;
                }
            }
        }
    }
    let mut err = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            err = err.max((forms.stiffness.get(i, j) - s[(i, j)]).norm());
            err = err.max((forms.mass.get(i, j) - ms[(i, j)]).norm());
            err = err.max((forms.boundary_mass.get(i, j) - nb[(i, j)]).norm());
        }
    }
    err
}

/// `max |sum_l chi_l(x_p) - 1|` over the fine nodes.
pub fn pou_error(k: f64, alpha: f64) -> f64 {
    let (coarse, fine) = build_grids(k, alpha, &GridOptions::default()).unwrap();
    let d = SubdomainDecomposition::build(&coarse, &fine).unwrap();
    d.weight_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
}

/// Relative difference between the preconditioner and the dense
/// composition `sum_l R_l^T inv(A_l) R_l` built from explicit inverses.
pub fn schwarz_dense_error(k: f64, coarse: usize, c_fine: f64, eps: f64, bc: BoundaryCondition) -> f64 {
    let opts = GridOptions {
        c_fine,
        ..Default::default()
    };
    let (cg, fine) = build_grids_fixed(k, coarse, &opts).unwrap();
    let d = SubdomainDecomposition::build(&cg, &fine).unwrap();
    let eta = Complex64::new(k, 0.0);
    let n = fine.num_nodes();
    let mut b = DMatrix::<Complex64>::zeros(n, n);
    for sd in d.subdomains() {
        let sys = assemble_local(&fine, sd, k, eps, eta, bc).unwrap();
        let nl = sys.dofs.len();
        let dense = DMatrix::from_fn(nl, nl, |i, j| sys.matrix.get(i, j));
        let inv = dense.try_inverse().expect("local matrix invertible");
        let mut r = DMatrix::<Complex64>::zeros(nl, n);
        for (row, &q) in sys.dofs.iter().enumerate() {
            r[(row, sd.nodes[q])] = Complex64::new(sd.weights[q], 0.0);
        }
        b += r.transpose() * inv * r;
    }
    let pre = SchwarzPreconditioner::assemble(&fine, &d, k, eps, eta, bc).unwrap();
    let x = random_vector(n, 3);
    let y = pre.apply_vec(&x).unwrap();
    let yd = &b * DVector::from_vec(x);
    rel_diff(&y, yd.as_slice())
}

/// Relative difference between the preconditioned GMRES solution and a
/// direct sparse solve, with the GMRES tolerance used.
pub fn gmres_direct_error(k: f64, coarse: usize, tol: f64) -> (f64, f64) {
    let (cg, fine) = build_grids_fixed(k, coarse, &GridOptions::default()).unwrap();
    let d = SubdomainDecomposition::build(&cg, &fine).unwrap();
    let eta = Complex64::new(k, 0.0);
    let ops = GlobalOperators::assemble(&fine, k, k, eta).unwrap();
    let pre = SchwarzPreconditioner::assemble(&fine, &d, k, k, eta, BoundaryCondition::Impedance).unwrap();
    let b = random_vector(fine.num_nodes(), 5);
    let direct = factorize(&ops.system).unwrap().solve(&b).unwrap();
    let cfg = GmresConfig {
        tolerance: tol,
        start: Start::Random(1),
        ..Default::default()
    };
    let res = gmres(&ops.system, Some(&pre), &b, InnerProduct::Euclidean, &cfg).unwrap();
    assert!(res.converged);
    (rel_diff(&res.solution, &direct), tol)
}
