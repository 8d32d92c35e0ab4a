//! P1 assembly of the Helmholtz matrices on the structured mesh, the local
//! subdomain systems and the plane-wave load vector.

use num_complex::Complex64;
use thiserror::Error;

use crate::grid::{FineMesh, NodeKind, Side, Subdomain};
use crate::sparsela::{CsrMatrix, SparseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssembleError {
    #[error("subdomain {id:?} has no free nodes after eliminating its boundary")]
    EmptyInterior { id: (usize, usize) },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// Closed-form P1 stiffness and mass matrices of a triangle.
pub fn element_matrices(p: [[f64; 2]; 3]) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
    let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
    let area = 0.5 * (b[0] * c[1] - b[1] * c[0]).abs();
    let mut k = [[0.0; 3]; 3];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
            m[i][j] = area / 12.0 * if i == j { 2.0 } else { 1.0 };
        }
    }
    (k, m)
}

/// P1 mass matrix of a boundary edge of length `e`.
pub fn edge_mass(e: f64) -> [[f64; 2]; 2] {
    [[e / 3.0, e / 6.0], [e / 6.0, e / 3.0]]
}

/// Stiffness, domain mass and boundary mass of a region.
#[derive(Debug, Clone, PartialEq)]
pub struct Forms {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    pub boundary_mass: CsrMatrix,
}

/// Which sides of an index box carry a boundary mass term, in the order
/// bottom, right, top, left.
type SideMask = [bool; 4];

/// Assembles on the box of fine cells `[lo, hi]` with nodes numbered by
/// `local(i, j)`.
fn assemble_box(
    fine: &FineMesh,
    lo: (usize, usize),
    hi: (usize, usize),
    sides: SideMask,
) -> Forms {
    let m = fine.cells_per_side() as f64;
    let w = hi.0 - lo.0 + 1;
    let n = w * (hi.1 - lo.1 + 1);
    let local = |i: usize, j: usize| (i - lo.0) + (j - lo.1) * w;
    let leg = 1.0 / m;
    let lower = [[0.0, 0.0], [leg, 0.0], [leg, leg]];
    let upper = [[0.0, 0.0], [leg, leg], [0.0, leg]];
    let elems = [element_matrices(lower), element_matrices(upper)];

    let cells = (hi.0 - lo.0) * (hi.1 - lo.1);
    let mut ks = Vec::with_capacity(18 * cells);
    let mut ms = Vec::with_capacity(18 * cells);
    for j in lo.1..hi.1 {
        for i in lo.0..hi.0 {
            let a = local(i, j);
            let b = local(i + 1, j);
            let c = local(i + 1, j + 1);
            let d = local(i, j + 1);
            for (tri, (ke, me)) in [[a, b, c], [a, c, d]].iter().zip(&elems) {
                for r in 0..3 {
                    for s in 0..3 {
                        ks.push((tri[r], tri[s], Complex64::new(ke[r][s], 0.0)));
                        ms.push((tri[r], tri[s], Complex64::new(me[r][s], 0.0)));
                    }
                }
            }
        }
    }

    let em = edge_mass(leg);
    let mut ns = Vec::new();
    let mut push_edge = |p: usize, q: usize| {
        for (r, a) in [p, q].into_iter().enumerate() {
            for (s, b) in [p, q].into_iter().enumerate() {
                ns.push((a, b, Complex64::new(em[r][s], 0.0)));
            }
        }
    };
    if sides[0] {
        for i in lo.0..hi.0 {
            push_edge(local(i, lo.1), local(i + 1, lo.1));
        }
    }
    if sides[1] {
        for j in lo.1..hi.1 {
            push_edge(local(hi.0, j), local(hi.0, j + 1));
        }
    }
    if sides[2] {
        for i in lo.0..hi.0 {
            push_edge(local(i + 1, hi.1), local(i, hi.1));
        }
    }
    if sides[3] {
        for j in lo.1..hi.1 {
            push_edge(local(lo.0, j + 1), local(lo.0, j));
        }
    }

    let build = |t: &[(usize, usize, Complex64)]| {
        CsrMatrix::from_triplets(n, n, t).expect("box indices are in range")
    };
    Forms {
        stiffness: build(&ks),
        mass: build(&ms),
        boundary_mass: build(&ns),
    }
}

/// Global `S`, `M` and `N` (boundary mass over the whole of the boundary).
pub fn assemble_forms(fine: &FineMesh) -> Forms {
    let m = fine.cells_per_side();
    assemble_box(fine, (0, 0), (m, m), [true; 4])
}

/// `S - (k^2 + i eps) M - i eta N`.
pub fn combine(forms: &Forms, k: f64, eps: f64, eta: Complex64) -> Result<CsrMatrix, AssembleError> {
    if !k.is_finite() || k < 1.0 {
        return Err(AssembleError::InvalidParameter(format!("wavenumber must be >= 1, got {k}")));
    }
    if !eps.is_finite() {
        return Err(AssembleError::InvalidParameter(format!("absorption must be finite, got {eps}")));
    }
    if eps.abs() > k * k {
        log::warn!("|eps| = {} exceeds k^2 = {}", eps.abs(), k * k);
    }
    let i = Complex64::new(0.0, 1.0);
    let shift = -Complex64::new(k * k, eps);
    Ok(CsrMatrix::linear_combination(&[
        (Complex64::new(1.0, 0.0), &forms.stiffness),
        (shift, &forms.mass),
        (-i * eta, &forms.boundary_mass),
    ])?)
}

/// Energy matrix `S + k^2 M`.
pub fn energy_matrix(forms: &Forms, k: f64) -> CsrMatrix {
    CsrMatrix::linear_combination(&[
        (Complex64::new(1.0, 0.0), &forms.stiffness),
        (Complex64::new(k * k, 0.0), &forms.mass),
    ])
    .expect("forms share dimensions")
}

/// Choice of the impedance coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EtaRule {
    /// `sign(eps) k`, with `sign(0) = 1`.
    #[default]
    SignK,
    /// `sqrt(k^2 + i eps)` on the branch with nonnegative imaginary part.
    SqrtShift,
}

impl EtaRule {
    pub fn eta(self, k: f64, eps: f64) -> Complex64 {
        match self {
            EtaRule::SignK => Complex64::new(if eps < 0.0 { -k } else { k }, 0.0),
            EtaRule::SqrtShift => {
                let s = Complex64::new(k * k, eps).sqrt();
                if s.im < 0.0 {
                    -s
                } else {
                    s
                }
            }
        }
    }
}

/// Global matrices for one wavenumber and absorption.
#[derive(Debug, Clone)]
pub struct GlobalOperators {
    pub forms: Forms,
    pub energy: CsrMatrix,
    pub system: CsrMatrix,
    pub k: f64,
    pub eps: f64,
    pub eta: Complex64,
}

impl GlobalOperators {
    pub fn assemble(fine: &FineMesh, k: f64, eps: f64, eta: Complex64) -> Result<Self, AssembleError> {
        let forms = assemble_forms(fine);
        let system = combine(&forms, k, eps, eta)?;
        let energy = energy_matrix(&forms, k);
        Ok(Self {
            forms,
            energy,
            system,
            k,
            eps,
            eta,
        })
    }

    pub fn dim(&self) -> usize {
        self.system.nrows()
    }
}

/// Boundary condition imposed on the artificial part of a subdomain boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryCondition {
    #[default]
    Impedance,
    Dirichlet,
}

/// Local subdomain matrix on its free nodes.
#[derive(Debug, Clone)]
pub struct LocalSystem {
    pub id: (usize, usize),
    pub bc: BoundaryCondition,
    pub matrix: CsrMatrix,
    /// Positions in `Subdomain::nodes` of the free nodes, in matrix order.
    pub dofs: Vec<usize>,
    /// Matrix rows of the free nodes lying on the subdomain boundary.
    pub boundary_dofs: Vec<usize>,
}

fn box_sides(sd: &Subdomain, m: usize) -> SideMask {
    [sd.lo.1 == 0, sd.hi.0 == m, sd.hi.1 == m, sd.lo.0 == 0]
}

/// Local matrix of a subdomain, assembled on its own triangles.
///
/// With impedance conditions the boundary term covers the whole subdomain
/// boundary. With Dirichlet conditions the nodes on the artificial boundary
/// are eliminated and the impedance term is kept on the part of the
/// subdomain boundary that lies on the boundary of the unit square.
pub fn assemble_local(
    fine: &FineMesh,
    sd: &Subdomain,
    k: f64,
    eps: f64,
    eta: Complex64,
    bc: BoundaryCondition,
) -> Result<LocalSystem, AssembleError> {
    let m = fine.cells_per_side();
    let on_edge = |i: usize, j: usize| i == sd.lo.0 || i == sd.hi.0 || j == sd.lo.1 || j == sd.hi.1;
    match bc {
        BoundaryCondition::Impedance => {
            let forms = assemble_box(fine, sd.lo, sd.hi, [true; 4]);
            let matrix = combine(&forms, k, eps, eta)?;
            let boundary_dofs = (0..sd.len())
                .filter(|&q| {
                    let (i, j) = fine.node_ij(sd.nodes[q]);
                    on_edge(i, j)
                })
                .collect();
            Ok(LocalSystem {
                id: sd.id,
                bc,
                matrix,
                dofs: (0..sd.len()).collect(),
                boundary_dofs,
            })
        }
        BoundaryCondition::Dirichlet => {
            let forms = assemble_box(fine, sd.lo, sd.hi, box_sides(sd, m));
            let full = combine(&forms, k, eps, eta)?;
            let dofs: Vec<usize> = (0..sd.len()).filter(|&q| sd.kinds[q] != NodeKind::Artificial).collect();
            if dofs.is_empty() {
                return Err(AssembleError::EmptyInterior { id: sd.id });
            }
            let boundary_dofs = dofs
                .iter()
                .enumerate()
                .filter(|&(_, &q)| sd.kinds[q] == NodeKind::Physical)
                .map(|(r, _)| r)
                .collect();
            Ok(LocalSystem {
                id: sd.id,
                bc,
                matrix: full.principal_submatrix(&dofs),
                dofs,
                boundary_dofs,
            })
        }
    }
}

/// Local energy matrix `S_l + k^2 M_l` on all nodes of the subdomain closure.
pub fn local_energy(fine: &FineMesh, sd: &Subdomain, k: f64) -> CsrMatrix {
    let forms = assemble_box(fine, sd.lo, sd.hi, [false; 4]);
    energy_matrix(&forms, k)
}

/// Nodal values of `exp(i k x . dhat)`.
pub fn plane_wave(fine: &FineMesh, k: f64, dhat: [f64; 2]) -> Vec<Complex64> {
    (0..fine.num_nodes())
        .map(|p| {
            let [x, y] = fine.coords(p);
            Complex64::new(0.0, k * (x * dhat[0] + y * dhat[1])).exp()
        })
        .collect()
}

/// Load vector whose exact solution is the plane wave in direction `dhat`.
///
/// The interior source `-i eps u` and the boundary data
/// `(i k dhat.n - i eta) u` are replaced by their nodal interpolants and
/// integrated exactly; at corners each edge uses its own normal.
pub fn assemble_rhs_planewave(
    fine: &FineMesh,
    forms: &Forms,
    k: f64,
    eps: f64,
    eta: Complex64,
    dhat: [f64; 2],
) -> Result<Vec<Complex64>, AssembleError> {
    let norm = (dhat[0] * dhat[0] + dhat[1] * dhat[1]).sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(AssembleError::InvalidParameter(format!("direction must be a unit vector, |d| = {norm}")));
    }
    let u = plane_wave(fine, k, dhat);
    let i = Complex64::new(0.0, 1.0);
    let mut f = if eps == 0.0 {
        vec![Complex64::new(0.0, 0.0); u.len()]
    } else {
        let src: Vec<Complex64> = u.iter().map(|&v| -i * eps * v).collect();
        forms.mass.spmv(&src)?
    };
    let em = edge_mass(1.0 / fine.cells_per_side() as f64);
    for edge in fine.boundary_edges() {
        let g = boundary_factor(edge.side, k, eta, dhat);
        let [p, q] = edge.nodes;
        let (gp, gq) = (g * u[p], g * u[q]);
        f[p] += em[0][0] * gp + em[0][1] * gq;
        f[q] += em[1][0] * gp + em[1][1] * gq;
    }
    Ok(f)
}

/// `i k dhat.n - i eta` on one side of the square.
pub fn boundary_factor(side: Side, k: f64, eta: Complex64, dhat: [f64; 2]) -> Complex64 {
    let n = side.outward_normal();
    let i = Complex64::new(0.0, 1.0);
    i * k * (dhat[0] * n[0] + dhat[1] * n[1]) - i * eta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CoarseGrid, SubdomainDecomposition};
    use crate::sparsela::factorize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn reference_triangle_element_matrices() {
        let (k, m) = element_matrices([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let ke = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for r in 0..3 {
            for s in 0..3 {
                assert!((k[r][s] - ke[r][s]).abs() < 1e-15);
                let me = 0.5 / 12.0 * if r == s { 2.0 } else { 1.0 };
                assert!((m[r][s] - me).abs() < 1e-16);
            }
        }
        let e = edge_mass(0.3);
        assert!((e[0][0] - 0.1).abs() < 1e-16 && (e[0][1] - 0.05).abs() < 1e-16);
    }

    #[test]
    fn global_forms_properties() {
        let f = FineMesh::new(6).unwrap();
        let forms = assemble_forms(&f);
        let n = f.num_nodes();
        let ones = vec![c(1.0, 0.0); n];
        let s1 = forms.stiffness.spmv(&ones).unwrap();
        assert!(s1.iter().all(|v| v.norm() < 1e-13));
        let mass_total: Complex64 = forms.mass.spmv(&ones).unwrap().iter().sum();
        assert!((mass_total - c(1.0, 0.0)).norm() < 1e-13);
        let perimeter: Complex64 = forms.boundary_mass.spmv(&ones).unwrap().iter().sum();
        assert!((perimeter - c(4.0, 0.0)).norm() < 1e-13);
        for mat in [&forms.stiffness, &forms.mass, &forms.boundary_mass] {
            assert_eq!(mat, &mat.transpose());
            assert!(mat.values().iter().all(|v| v.im == 0.0));
        }
        for i in 0..n {
            for (j, v) in forms.boundary_mass.row(i) {
                if v != c(0.0, 0.0) {
                    assert!(f.is_boundary_node(i) && f.is_boundary_node(j));
                }
            }
        }
    }

    #[test]
    fn combine_identities() {
        let f = FineMesh::new(5).unwrap();
        let forms = assemble_forms(&f);
        let k = 7.0;
        let a0 = combine(&forms, k, 0.0, c(k, 0.0)).unwrap();
        assert_eq!(a0, a0.transpose());
        // not Hermitian: boundary diagonal entries carry -ik N
        assert!(a0.get(0, 0).im != 0.0);

        let a = combine(&forms, k, k, c(k, 0.0)).unwrap();
        let n = f.num_nodes();
        let ones = vec![c(1.0, 0.0); n];
        let lhs = a.spmv(&ones).unwrap();
        let m1 = forms.mass.spmv(&ones).unwrap();
        let n1 = forms.boundary_mass.spmv(&ones).unwrap();
        for i in 0..n {
            let rhs = -c(k * k, k) * m1[i] - c(0.0, k) * n1[i];
            assert!((lhs[i] - rhs).norm() < 1e-12);
        }

        let eps = 3.5;
        let eta = c(2.0, 1.0);
        let a = combine(&forms, k, eps, eta).unwrap();
        let diff = CsrMatrix::linear_combination(&[
            (c(1.0, 0.0), &a),
            (c(-1.0, 0.0), &forms.stiffness),
            (c(k * k, eps), &forms.mass),
            (c(0.0, 1.0) * eta, &forms.boundary_mass),
        ])
        .unwrap();
        assert!(diff.max_abs() < 1e-13);
    }

    #[test]
    fn energy_matrix_is_hermitian_positive_definite() {
        let f = FineMesh::new(7).unwrap();
        let forms = assemble_forms(&f);
        let d = energy_matrix(&forms, 9.0);
        let dmax = d.max_abs();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let v: Vec<Complex64> = (0..f.num_nodes())
                .map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let dv = d.spmv(&v).unwrap();
            let q: Complex64 = v.iter().zip(&dv).map(|(a, b)| a.conj() * b).sum();
            let vv: f64 = v.iter().map(|x| x.norm_sqr()).sum();
            assert!(q.re > 0.0);
            assert!(q.im.abs() <= 1e-12 * vv * dmax);
        }
    }

    #[test]
    fn eta_rules() {
        assert_eq!(EtaRule::SignK.eta(10.0, 0.0), c(10.0, 0.0));
        assert_eq!(EtaRule::SignK.eta(10.0, -3.0), c(-10.0, 0.0));
        let s = EtaRule::SqrtShift.eta(10.0, 20.0);
        assert!((s * s - c(100.0, 20.0)).norm() < 1e-12 && s.re > 0.0);
        let s = EtaRule::SqrtShift.eta(10.0, -20.0);
        assert!((s * s - c(100.0, -20.0)).norm() < 1e-12 && s.im >= 0.0);
    }

    #[test]
    fn whole_domain_local_matrix_equals_global() {
        let f = FineMesh::new(8).unwrap();
        let d = SubdomainDecomposition::build(&CoarseGrid::new(1).unwrap(), &f).unwrap();
        let (k, eps, eta) = (6.0, 6.0, c(6.0, 0.0));
        let g = GlobalOperators::assemble(&f, k, eps, eta).unwrap();
        for sd in d.subdomains() {
            let local = assemble_local(&f, sd, k, eps, eta, BoundaryCondition::Impedance).unwrap();
            assert_eq!(local.matrix, g.system);
        }
    }

    #[test]
    fn interior_subdomain_differs_only_on_its_boundary() {
        let f = FineMesh::new(8).unwrap();
        let d = SubdomainDecomposition::build(&CoarseGrid::new(4).unwrap(), &f).unwrap();
        let (k, eps, eta) = (5.0, 5.0, c(5.0, 0.0));
        let g = GlobalOperators::assemble(&f, k, eps, eta).unwrap();
        let sd = d.get((2, 2)).unwrap();
        let local = assemble_local(&f, sd, k, eps, eta, BoundaryCondition::Impedance).unwrap();
        let leg = 1.0 / 8.0;
        let shift = c(k * k, eps);

        // volume contributions of the triangles outside the box
        let n = f.num_nodes();
        let mut outside = vec![vec![c(0.0, 0.0); n]; n];
        for tri in f.triangles() {
            let inside = tri.iter().all(|&p| {
                let (i, j) = f.node_ij(p);
                i >= sd.lo.0 && i <= sd.hi.0 && j >= sd.lo.1 && j <= sd.hi.1
            });
            if inside {
                continue;
            }
            let (ke, me) = element_matrices([f.coords(tri[0]), f.coords(tri[1]), f.coords(tri[2])]);
            for r in 0..3 {
                for s in 0..3 {
                    outside[tri[r]][tri[s]] += c(ke[r][s], 0.0) - shift * me[r][s];
                }
            }
        }

        for a in 0..sd.len() {
            for b in 0..sd.len() {
                let (pa, pb) = (sd.nodes[a], sd.nodes[b]);
                let diff = local.matrix.get(a, b) - g.system.get(pa, pb);
                let interior = |q: usize| sd.kinds[q] == NodeKind::Interior;
                if interior(a) || interior(b) {
                    assert!(diff.norm() < 1e-13, "({a},{b})");
                    continue;
                }
                let (ia, ja) = f.node_ij(pa);
                let (ib, jb) = f.node_ij(pb);
                let same_side = (ia == ib && (ia == sd.lo.0 || ia == sd.hi.0))
                    || (ja == jb && (ja == sd.lo.1 || ja == sd.hi.1));
                let dist = ia.abs_diff(ib) + ja.abs_diff(jb);
                let nl = if a == b {
                    2.0 * leg / 3.0
                } else if same_side && dist == 1 {
                    leg / 6.0
                } else {
                    0.0
                };
                let expected = -c(0.0, 1.0) * eta * nl - outside[pa][pb];
                assert!((diff - expected).norm() < 1e-12, "({a},{b})");
            }
        }
    }

    #[test]
    fn dirichlet_single_free_node() {
        let f = FineMesh::new(4).unwrap();
        let d = SubdomainDecomposition::build(&CoarseGrid::new(4).unwrap(), &f).unwrap();
        let (k, eps) = (3.0, 2.0);
        let sd = d.get((2, 2)).unwrap();
        let loc = assemble_local(&f, sd, k, eps, c(k, 0.0), BoundaryCondition::Dirichlet).unwrap();
        assert_eq!(loc.matrix.nrows(), 1);
        let g = GlobalOperators::assemble(&f, k, eps, c(k, 0.0)).unwrap();
        let p = f.node_index(2, 2);
        let expected = g.forms.stiffness.get(p, p) - c(k * k, eps) * g.forms.mass.get(p, p);
        assert!((loc.matrix.get(0, 0) - expected).norm() < 1e-14);
        assert_eq!(sd.nodes[loc.dofs[0]], p);
    }

    #[test]
    fn dirichlet_without_free_nodes_is_signalled() {
        let f = FineMesh::new(2).unwrap();
        let d = SubdomainDecomposition::build(&CoarseGrid::new(2).unwrap(), &f).unwrap();
        // box [0,1]x[0,1] of the corner subdomain: every node except the
        // physical corner lies on an artificial side
        let sd = d.get((0, 0)).unwrap();
        let loc = assemble_local(&f, sd, 2.0, 0.0, c(2.0, 0.0), BoundaryCondition::Dirichlet).unwrap();
        assert_eq!(loc.dofs.len(), 1);
        let f = FineMesh::new(4).unwrap();
        let d = SubdomainDecomposition::build(&CoarseGrid::new(4).unwrap(), &f).unwrap();
        let mut sd = d.get((2, 2)).unwrap().clone();
        for kind in sd.kinds.iter_mut() {
            *kind = NodeKind::Artificial;
        }
        assert!(matches!(
            assemble_local(&f, &sd, 2.0, 0.0, c(2.0, 0.0), BoundaryCondition::Dirichlet),
            Err(AssembleError::EmptyInterior { .. })
        ));
    }

    #[test]
    fn rhs_without_absorption_lives_on_the_boundary() {
        let f = FineMesh::new(6).unwrap();
        let forms = assemble_forms(&f);
        let d = [std::f64::consts::FRAC_1_SQRT_2; 2];
        let rhs = assemble_rhs_planewave(&f, &forms, 5.0, 0.0, c(5.0, 0.0), d).unwrap();
        for (p, v) in rhs.iter().enumerate() {
            if !f.is_boundary_node(p) {
                assert_eq!(*v, c(0.0, 0.0));
            }
        }
    }

    #[test]
    fn boundary_data_on_the_right_edge() {
        let k = 40.0;
        let d = [std::f64::consts::FRAC_1_SQRT_2; 2];
        let g = boundary_factor(Side::Right, k, c(k, 0.0), d);
        let expected = c(0.0, k * (std::f64::consts::FRAC_1_SQRT_2 - 1.0));
        assert!((g - expected).norm() < 1e-13);
        // against a finite-difference normal derivative of the plane wave
        let u = |x: f64, y: f64| c(0.0, k * (x * d[0] + y * d[1])).exp();
        let (x, y, h) = (1.0, 0.3, 1e-6);
        let dudn = (u(x + h, y) - u(x - h, y)) / (2.0 * h);
        let g_direct = dudn - c(0.0, k) * u(x, y);
        assert!((g_direct - g * u(x, y)).norm() < 1e-6 * k);
    }

    #[test]
    fn discrete_solution_converges_to_the_plane_wave() {
        let k = 6.0;
        let d = [std::f64::consts::FRAC_1_SQRT_2; 2];
        let mut errs = Vec::new();
        for m in [8, 16, 32, 64] {
            let f = FineMesh::new(m).unwrap();
            let g = GlobalOperators::assemble(&f, k, k, c(k, 0.0)).unwrap();
            let rhs = assemble_rhs_planewave(&f, &g.forms, k, k, c(k, 0.0), d).unwrap();
            let uh = factorize(&g.system).unwrap().solve(&rhs).unwrap();
            let u = plane_wave(&f, k, d);
            let e: Vec<Complex64> = uh.iter().zip(&u).map(|(a, b)| a - b).collect();
            let dn = |v: &[Complex64]| {
                let dv = g.energy.spmv(v).unwrap();
                v.iter().zip(&dv).map(|(a, b)| (a.conj() * b).re).sum::<f64>().sqrt()
            };
            errs.push(dn(&e) / dn(&u));
        }
        for w in errs.windows(2) {
            assert!(w[1] < 0.6 * w[0], "{errs:?}");
        }
        assert!(*errs.last().unwrap() < 0.05, "{errs:?}");
    }

    /// Numerical-quadrature oracle for the element integrals on the two
    /// triangles of a single square.
    mod quadrature_oracle {
        use super::*;
        use nalgebra::{Matrix3, Vector3};

        // Dunavant degree-5 rule on the reference triangle (weights sum to 1).
        const PTS: [(f64, f64, f64); 7] = [
            (1.0 / 3.0, 1.0 / 3.0, 0.225),
            (0.059_715_871_789_770, 0.470_142_064_105_115, 0.132_394_152_788_506),
            (0.470_142_064_105_115, 0.059_715_871_789_770, 0.132_394_152_788_506),
            (0.470_142_064_105_115, 0.470_142_064_105_115, 0.132_394_152_788_506),
            (0.797_426_985_353_087, 0.101_286_507_323_456, 0.125_939_180_544_827),
            (0.101_286_507_323_456, 0.797_426_985_353_087, 0.125_939_180_544_827),
            (0.101_286_507_323_456, 0.101_286_507_323_456, 0.125_939_180_544_827),
        ];

        fn basis_coeffs(p: &[[f64; 2]; 3]) -> Matrix3<f64> {
            // rows: basis i = a + b x + c y
            let v = Matrix3::from_fn(|r, col| match col {
                0 => 1.0,
                1 => p[r][0],
                _ => p[r][1],
            });
            v.try_inverse().unwrap().transpose()
        }

        fn integrate(p: &[[f64; 2]; 3], f: impl Fn(f64, f64) -> f64) -> f64 {
            let e1 = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
            let e2 = [p[2][0] - p[0][0], p[2][1] - p[0][1]];
            let jac = (e1[0] * e2[1] - e1[1] * e2[0]).abs();
            PTS.iter()
                .map(|&(s, t, w)| {
                    let x = p[0][0] + s * e1[0] + t * e2[0];
                    let y = p[0][1] + s * e1[1] + t * e2[1];
                    w * f(x, y)
                })
                .sum::<f64>()
                * 0.5
                * jac
        }

        #[test]
        fn two_triangle_mesh_matches_quadrature() {
            let f = FineMesh::new(1).unwrap();
            let forms = assemble_forms(&f);
            let mut s = [[0.0; 4]; 4];
            let mut m = [[0.0; 4]; 4];
            for tri in f.triangles() {
                let p = [f.coords(tri[0]), f.coords(tri[1]), f.coords(tri[2])];
                let cf = basis_coeffs(&p);
                let phi = |i: usize, x: f64, y: f64| cf.row(i).dot(&Vector3::new(1.0, x, y).transpose());
                for a in 0..3 {
                    for b in 0..3 {
                        let ga = (cf[(a, 1)], cf[(a, 2)]);
                        let gb = (cf[(b, 1)], cf[(b, 2)]);
                        s[tri[a]][tri[b]] += integrate(&p, |_, _| ga.0 * gb.0 + ga.1 * gb.1);
                        m[tri[a]][tri[b]] += integrate(&p, |x, y| phi(a, x, y) * phi(b, x, y));
                    }
                }
            }
            // three-point Gauss-Legendre on each unit edge
            let gl = [
                (-(0.6f64).sqrt(), 5.0 / 9.0),
                (0.0, 8.0 / 9.0),
                ((0.6f64).sqrt(), 5.0 / 9.0),
            ];
            let mut nb = [[0.0; 4]; 4];
            for e in f.boundary_edges() {
                let [p, q] = e.nodes;
                for &(t, w) in &gl {
                    let s1 = 0.5 * (1.0 + t);
                    let vals = [(p, 1.0 - s1), (q, s1)];
                    for &(i, vi) in &vals {
                        for &(j, vj) in &vals {
                            nb[i][j] += 0.5 * w * vi * vj;
                        }
                    }
                }
            }
            for i in 0..4 {
                for j in 0..4 {
                    assert!((forms.stiffness.get(i, j).re - s[i][j]).abs() <= 1e-13);
                    assert!((forms.mass.get(i, j).re - m[i][j]).abs() <= 1e-13);
                    assert!((forms.boundary_mass.get(i, j).re - nb[i][j]).abs() <= 1e-13);
                }
            }
        }
    }
}
