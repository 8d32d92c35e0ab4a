//! Coarse square grid, nested P1 triangulation of the unit square, and the
//! overlapping subdomains with their bilinear partition of unity.

use std::io::{self, Write};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("problem too large: {nodes} fine nodes exceed the cap of {cap}")]
    TooLarge { nodes: usize, cap: usize },
    #[error("fine mesh with {m_fine} cells per side does not nest in a {coarse}x{coarse} coarse grid")]
    NotNested { m_fine: usize, coarse: usize },
}

/// Uniform `M x M` grid of squares on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoarseGrid {
    cells: usize,
}

impl CoarseGrid {
    pub fn new(cells: usize) -> Result<Self, GridError> {
        if cells == 0 {
            return Err(GridError::InvalidParameter("coarse grid needs at least one cell".into()));
        }
        Ok(Self { cells })
    }

    /// Number of coarse cells per side, `M`.
    pub fn cells_per_side(&self) -> usize {
        self.cells
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn node(&self, l: usize, m: usize) -> [f64; 2] {
        let h = self.h();
        [l as f64 * h, m as f64 * h]
    }

    pub fn num_nodes(&self) -> usize {
        (self.cells + 1) * (self.cells + 1)
    }

    pub fn num_cells(&self) -> usize {
        self.cells * self.cells
    }
}

/// Side of the unit square an edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Side::Bottom => [0.0, -1.0],
            Side::Right => [1.0, 0.0],
            Side::Top => [0.0, 1.0],
            Side::Left => [-1.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub side: Side,
}

/// Structured triangulation with `m` squares per side, each cut along the
/// diagonal from its lower-left to its upper-right corner.
///
/// Node `(i, j)` sits at `(i/m, j/m)` and has index `i + j (m + 1)`. The
/// whole boundary is an impedance boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FineMesh {
    m: usize,
}

impl FineMesh {
    pub fn new(m: usize) -> Result<Self, GridError> {
        if m == 0 {
            return Err(GridError::InvalidParameter("fine mesh needs at least one cell".into()));
        }
        Ok(Self { m })
    }

    pub fn cells_per_side(&self) -> usize {
        self.m
    }

    pub fn num_nodes(&self) -> usize {
        (self.m + 1) * (self.m + 1)
    }

    pub fn num_triangles(&self) -> usize {
        2 * self.m * self.m
    }

    /// Mesh diameter, the hypotenuse of every triangle.
    pub fn h(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.m as f64
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        i + j * (self.m + 1)
    }

    pub fn node_ij(&self, p: usize) -> (usize, usize) {
        (p % (self.m + 1), p / (self.m + 1))
    }

    pub fn coords(&self, p: usize) -> [f64; 2] {
        let (i, j) = self.node_ij(p);
        let m = self.m as f64;
        [i as f64 / m, j as f64 / m]
    }

    pub fn is_boundary_node(&self, p: usize) -> bool {
        let (i, j) = self.node_ij(p);
        i == 0 || j == 0 || i == self.m || j == self.m
    }

    /// Triangles of the square with lower-left node `(i, j)`, counterclockwise.
    pub fn cell_triangles(&self, i: usize, j: usize) -> [[usize; 3]; 2] {
        let a = self.node_index(i, j);
        let b = self.node_index(i + 1, j);
        let c = self.node_index(i + 1, j + 1);
        let d = self.node_index(i, j + 1);
        [[a, b, c], [a, c, d]]
    }

    pub fn triangles(&self) -> Vec<[usize; 3]> {
        let mut t = Vec::with_capacity(self.num_triangles());
        for j in 0..self.m {
            for i in 0..self.m {
                t.extend(self.cell_triangles(i, j));
            }
        }
        t
    }

    /// The `4m` edges on the boundary of the unit square.
    pub fn boundary_edges(&self) -> Vec<BoundaryEdge> {
        let m = self.m;
        let mut e = Vec::with_capacity(4 * m);
        for i in 0..m {
            e.push(BoundaryEdge {
                nodes: [self.node_index(i, 0), self.node_index(i + 1, 0)],
                side: Side::Bottom,
            });
        }
        for j in 0..m {
            e.push(BoundaryEdge {
                nodes: [self.node_index(m, j), self.node_index(m, j + 1)],
                side: Side::Right,
            });
        }
        for i in (0..m).rev() {
            e.push(BoundaryEdge {
                nodes: [self.node_index(i + 1, m), self.node_index(i, m)],
                side: Side::Top,
            });
        }
        for j in (0..m).rev() {
            e.push(BoundaryEdge {
                nodes: [self.node_index(0, j + 1), self.node_index(0, j)],
                side: Side::Left,
            });
        }
        e
    }

    /// Plain-text listing of nodes and triangles for debugging.
    pub fn write_listing<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "nodes {}", self.num_nodes())?;
        for p in 0..self.num_nodes() {
            let [x, y] = self.coords(p);
            writeln!(out, "{p} {x} {y}")?;
        }
        writeln!(out, "triangles {}", self.num_triangles())?;
        for (t, [a, b, c]) in self.triangles().into_iter().enumerate() {
            writeln!(out, "{t} {a} {b} {c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    /// Proportionality constant in `m_fine ~ c_fine k^{3/2}`.
    pub c_fine: f64,
    /// Upper bound on the number of fine nodes.
    pub max_nodes: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            c_fine: 1.0,
            max_nodes: 4_000_000,
        }
    }
}

/// `M = max(1, round(k^alpha))`.
pub fn coarse_cells(k: f64, alpha: f64) -> Result<usize, GridError> {
    if !k.is_finite() || k < 1.0 {
        return Err(GridError::InvalidParameter(format!("wavenumber must be finite and >= 1, got {k}")));
    }
    if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
        return Err(GridError::InvalidParameter(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok((k.powf(alpha).round() as usize).max(1))
}

/// Smallest multiple of `coarse` that is at least `c_fine k^{3/2}`.
pub fn fine_cells(k: f64, coarse: usize, c_fine: f64) -> Result<usize, GridError> {
    if !c_fine.is_finite() || c_fine <= 0.0 {
        return Err(GridError::InvalidParameter(format!("c_fine must be positive, got {c_fine}")));
    }
    if coarse == 0 {
        return Err(GridError::InvalidParameter("coarse grid needs at least one cell".into()));
    }
    let target = c_fine * k.powf(1.5);
    let blocks = (target / coarse as f64).ceil().max(1.0) as usize;
    Ok(coarse * blocks)
}

pub fn build_grids(k: f64, alpha: f64, opts: &GridOptions) -> Result<(CoarseGrid, FineMesh), GridError> {
    let coarse = coarse_cells(k, alpha)?;
    build_grids_fixed(k, coarse, opts)
}

/// Grids for a prescribed number of coarse cells per side.
pub fn build_grids_fixed(k: f64, coarse: usize, opts: &GridOptions) -> Result<(CoarseGrid, FineMesh), GridError> {
    if !k.is_finite() || k < 1.0 {
        return Err(GridError::InvalidParameter(format!("wavenumber must be finite and >= 1, got {k}")));
    }
    let m_fine = fine_cells(k, coarse, opts.c_fine)?;
    let nodes = (m_fine + 1).saturating_mul(m_fine + 1);
    if nodes > opts.max_nodes {
        return Err(GridError::TooLarge {
            nodes,
            cap: opts.max_nodes,
        });
    }
    Ok((CoarseGrid::new(coarse)?, FineMesh::new(m_fine)?))
}

/// Position of a subdomain node relative to the subdomain boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    /// On a side of the subdomain that lies inside the unit square (the
    /// endpoints of such a side included).
    Artificial,
    /// On the boundary of the unit square and on no artificial side.
    Physical,
}

/// Closure of one overlapping subdomain: an axis-aligned box of fine nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Subdomain {
    pub id: (usize, usize),
    /// Fine-node index box `[lo.0, hi.0] x [lo.1, hi.1]`.
    pub lo: (usize, usize),
    pub hi: (usize, usize),
    /// Local-to-global node map, `x` index running fastest.
    pub nodes: Vec<usize>,
    /// Partition-of-unity weight at each local node.
    pub weights: Vec<f64>,
    pub kinds: Vec<NodeKind>,
    /// Largest side length of the subdomain.
    pub diameter: f64,
    /// Overlap width.
    pub delta: f64,
}

impl Subdomain {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Fine cells per side of the box.
    pub fn box_cells(&self) -> (usize, usize) {
        (self.hi.0 - self.lo.0, self.hi.1 - self.lo.1)
    }

    pub fn local_index(&self, i: usize, j: usize) -> Option<usize> {
        if i < self.lo.0 || i > self.hi.0 || j < self.lo.1 || j > self.hi.1 {
            return None;
        }
        let w = self.hi.0 - self.lo.0 + 1;
        Some((i - self.lo.0) + (j - self.lo.1) * w)
    }

    /// A fine square belongs to the subdomain when its lower-left node does
    /// and it fits in the box.
    pub fn contains_cell(&self, i: usize, j: usize) -> bool {
        i >= self.lo.0 && i < self.hi.0 && j >= self.lo.1 && j < self.hi.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainDecomposition {
    coarse_cells: usize,
    fine_cells: usize,
    subdomains: Vec<Subdomain>,
    lambda: usize,
}

impl SubdomainDecomposition {
    /// Subdomains around the coarse nodes, ordered with `l` (the `x` index)
    /// running fastest.
    pub fn build(coarse: &CoarseGrid, fine: &FineMesh) -> Result<Self, GridError> {
        let cm = coarse.cells_per_side();
        let m = fine.cells_per_side();
        if m % cm != 0 {
            return Err(GridError::NotNested {
                m_fine: m,
                coarse: cm,
            });
        }
        let r = m / cm;
        let h_coarse = coarse.h();
        let mut subdomains = Vec::with_capacity(coarse.num_nodes());
        for mm in 0..=cm {
            for l in 0..=cm {
                let lo = ((l * r).saturating_sub(r), (mm * r).saturating_sub(r));
                let hi = ((l * r + r).min(m), (mm * r + r).min(m));
                let mut nodes = Vec::with_capacity((hi.0 - lo.0 + 1) * (hi.1 - lo.1 + 1));
                let mut weights = Vec::with_capacity(nodes.capacity());
                let mut kinds = Vec::with_capacity(nodes.capacity());
                for j in lo.1..=hi.1 {
                    let wy = hat(j, mm * r, r);
                    for i in lo.0..=hi.0 {
                        nodes.push(fine.node_index(i, j));
                        weights.push(hat(i, l * r, r) * wy);
                        kinds.push(classify(i, j, lo, hi, m));
                    }
                }
                let side = (hi.0 - lo.0).max(hi.1 - lo.1) as f64 / m as f64;
                subdomains.push(Subdomain {
                    id: (l, mm),
                    lo,
                    hi,
                    nodes,
                    weights,
                    kinds,
                    diameter: side,
                    delta: h_coarse,
                });
            }
        }
        let lambda = max_multiplicity(&subdomains, fine.num_nodes());
        Ok(Self {
            coarse_cells: cm,
            fine_cells: m,
            subdomains,
            lambda,
        })
    }

    /// One subdomain equal to the whole domain with weight one everywhere.
    pub fn whole_domain(fine: &FineMesh) -> Self {
        let m = fine.cells_per_side();
        let n = fine.num_nodes();
        let kinds = (0..n)
            .map(|p| {
                if fine.is_boundary_node(p) {
                    NodeKind::Physical
                } else {
                    NodeKind::Interior
                }
            })
            .collect();
        Self {
            coarse_cells: 1,
            fine_cells: m,
            subdomains: vec![Subdomain {
                id: (0, 0),
                lo: (0, 0),
                hi: (m, m),
                nodes: (0..n).collect(),
                weights: vec![1.0; n],
                kinds,
                diameter: 1.0,
                delta: 1.0,
            }],
            lambda: 1,
        }
    }

    pub fn subdomains(&self) -> &[Subdomain] {
        &self.subdomains
    }

    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }

    pub fn get(&self, id: (usize, usize)) -> Option<&Subdomain> {
        self.subdomains.iter().find(|s| s.id == id)
    }

    /// Maximum number of open subdomains containing any one fine node.
    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn coarse_cells(&self) -> usize {
        self.coarse_cells
    }

    pub fn fine_cells(&self) -> usize {
        self.fine_cells
    }

    /// `sum_l chi_l(x_p)` for every fine node.
    pub fn weight_sums(&self) -> Vec<f64> {
        let n = (self.fine_cells + 1) * (self.fine_cells + 1);
        let mut s = vec![0.0; n];
        for sd in &self.subdomains {
            for (&p, &w) in sd.nodes.iter().zip(&sd.weights) {
                s[p] += w;
            }
        }
        s
    }
}

/// Piecewise-linear hat centered at fine index `c` with half-width `r`.
fn hat(i: usize, c: usize, r: usize) -> f64 {
    let d = i.abs_diff(c);
    if d >= r {
        0.0
    } else {
        (r - d) as f64 / r as f64
    }
}

fn classify(i: usize, j: usize, lo: (usize, usize), hi: (usize, usize), m: usize) -> NodeKind {
    let artificial = (i == lo.0 && lo.0 > 0)
        || (i == hi.0 && hi.0 < m)
        || (j == lo.1 && lo.1 > 0)
        || (j == hi.1 && hi.1 < m);
    if artificial {
        NodeKind::Artificial
    } else if i == 0 || j == 0 || i == m || j == m {
        NodeKind::Physical
    } else {
        NodeKind::Interior
    }
}

/// Largest number of open subdomains sharing a node. Nodes on an artificial
/// side lie only in the closure and are not counted.
fn max_multiplicity(subdomains: &[Subdomain], n: usize) -> usize {
    let mut count = vec![0usize; n];
    for sd in subdomains {
        for (&p, &kind) in sd.nodes.iter().zip(&sd.kinds) {
            if kind != NodeKind::Artificial {
                count[p] += 1;
            }
        }
    }
    count.into_iter().max().unwrap_or(0)
}
