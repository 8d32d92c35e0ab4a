//! Experiment configuration and execution: iteration-count tables for the
//! preconditioned GMRES runs and sweeps of the theory diagnostics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assemble::{assemble_rhs_planewave, BoundaryCondition, EtaRule, GlobalOperators};
use crate::diag::{self, DiagError, FovOptions, PerturbationReport, TheoryOptions, TheoryReport};
use crate::grid::{build_grids, build_grids_fixed, CoarseGrid, FineMesh, GridOptions, SubdomainDecomposition};
use crate::krylov::{gmres, GmresConfig, InnerProduct, Start};
use crate::schwarz::SchwarzPreconditioner;

/// Plane-wave direction of the test problems.
pub const DIRECTION: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("cannot resolve shift rule `{rule}` without an alpha value")]
    Unresolvable { rule: EpsRule },
    #[error("empty result set")]
    Empty,
    #[error("cell failed: {0}")]
    Cell(String),
    #[error(transparent)]
    Diag(#[from] DiagError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
    Custom,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Experiment::E1 => "E1",
            Experiment::E2 => "E2",
            Experiment::E3 => "E3",
            Experiment::E4 => "E4",
            Experiment::E5 => "E5",
            Experiment::E6 => "E6",
            Experiment::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for Experiment {
    type Err = RunnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "E1" => Experiment::E1,
            "E2" => Experiment::E2,
            "E3" => Experiment::E3,
            "E4" => Experiment::E4,
            "E5" => Experiment::E5,
            "E6" => Experiment::E6,
            "CUSTOM" => Experiment::Custom,
            _ => return Err(bad("experiment", s)),
        })
    }
}

fn bad(key: &str, value: &str) -> RunnerError {
    RunnerError::BadValue {
        key: key.into(),
        value: value.into(),
    }
}

/// Rule giving the absorption `eps` of a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsRule {
    Zero,
    /// `eps = k`.
    K,
    /// `eps = k^{1 + beta}` with `beta = alpha + 0.1`.
    KOnePlusBeta,
    /// `eps = k^p`.
    KPower(f64),
    /// `eps = c k`.
    Multiple(f64),
    Value(f64),
}

impl EpsRule {
    pub fn resolve(self, k: f64, alpha: Option<f64>) -> Result<f64, RunnerError> {
        Ok(match self {
            EpsRule::Zero => 0.0,
            EpsRule::K => k,
            EpsRule::KOnePlusBeta => {
                let a = alpha.ok_or(RunnerError::Unresolvable { rule: self })?;
                k.powf(1.0 + a + 0.1)
            }
            EpsRule::KPower(p) => k.powf(p),
            EpsRule::Multiple(c) => c * k,
            EpsRule::Value(v) => v,
        })
    }
}

impl fmt::Display for EpsRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsRule::Zero => f.write_str("0"),
            EpsRule::K => f.write_str("k"),
            EpsRule::KOnePlusBeta => f.write_str("k1b"),
            EpsRule::KPower(p) => write!(f, "k^{p}"),
            EpsRule::Multiple(c) => write!(f, "{c}k"),
            EpsRule::Value(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for EpsRule {
    type Err = RunnerError;

    /// Accepts `0`, `k`, `k1b`, `k2`, `k^p`, `<c>k` and plain numbers.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let err = || bad("eps", s);
        Ok(match t.as_str() {
            "0" => EpsRule::Zero,
            "k" => EpsRule::K,
            "k1b" => EpsRule::KOnePlusBeta,
            "k2" => EpsRule::KPower(2.0),
            _ => {
                if let Some(p) = t.strip_prefix("k^") {
                    EpsRule::KPower(p.parse().map_err(|_| err())?)
                } else if let Some(c) = t.strip_suffix('k') {
                    EpsRule::Multiple(c.trim_end_matches('*').parse().map_err(|_| err())?)
                } else {
                    EpsRule::Value(t.parse().map_err(|_| err())?)
                }
            }
        })
    }
}

/// Coarse-grid choice per cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Partition {
    /// `M = round(k^alpha)`.
    Alpha(Vec<f64>),
    /// Fixed number of coarse cells per side.
    Fixed(Vec<usize>),
}

impl Partition {
    fn len(&self) -> usize {
        match self {
            Partition::Alpha(v) => v.len(),
            Partition::Fixed(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartRule {
    Random,
    Zero,
}

impl fmt::Display for StartRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StartRule::Random => "random",
            StartRule::Zero => "zero",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerRule {
    Euclidean,
    Energy,
}

fn bc_name(bc: BoundaryCondition) -> &'static str {
    match bc {
        BoundaryCondition::Impedance => "impedance",
        BoundaryCondition::Dirichlet => "dirichlet",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub k_list: Vec<f64>,
    pub partition: Partition,
    pub eps_prob: EpsRule,
    pub eps_prec: EpsRule,
    pub bc: BoundaryCondition,
    pub start: StartRule,
    pub seed: u64,
    pub eta: EtaRule,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub c_fine: f64,
    pub inner: InnerRule,
    pub workers: usize,
    pub max_nodes: usize,
}

impl ExperimentConfig {
    pub fn preset(experiment: Experiment) -> Self {
        let alphas = Partition::Alpha(vec![0.2, 0.3, 0.4, 0.5]);
        let (partition, eps_prob, eps_prec, bc) = match experiment {
            Experiment::E1 => (alphas, EpsRule::KOnePlusBeta, EpsRule::KOnePlusBeta, BoundaryCondition::Impedance),
            Experiment::E2 => (alphas, EpsRule::K, EpsRule::K, BoundaryCondition::Impedance),
            Experiment::E3 => (alphas, EpsRule::Zero, EpsRule::Zero, BoundaryCondition::Impedance),
            Experiment::E4 | Experiment::Custom => (alphas, EpsRule::Zero, EpsRule::K, BoundaryCondition::Impedance),
            Experiment::E5 => (Partition::Fixed(vec![4, 8]), EpsRule::Zero, EpsRule::K, BoundaryCondition::Impedance),
            Experiment::E6 => (alphas, EpsRule::Zero, EpsRule::K, BoundaryCondition::Dirichlet),
        };
        Self {
            experiment,
            k_list: vec![10.0, 20.0, 40.0, 60.0],
            partition,
            eps_prob,
            eps_prec,
            bc,
            start: StartRule::Random,
            seed: 2024,
            eta: EtaRule::SignK,
            tolerance: 1e-6,
            max_iterations: 500,
            c_fine: 1.0,
            inner: InnerRule::Euclidean,
            workers: 1,
            max_nodes: GridOptions::default().max_nodes,
        }
    }

    /// Sets one option from its flag name (without dashes) and text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), RunnerError> {
        let v = value.trim();
        let num = |key: &str| v.parse::<f64>().map_err(|_| bad(key, v));
        let int = |key: &str| v.parse::<usize>().map_err(|_| bad(key, v));
        match key.trim().replace('_', "-").as_str() {
            "experiment" => *self = Self { experiment: v.parse()?, ..self.clone() },
            "k" => self.k_list = parse_list(key, v)?,
            "alpha" => self.partition = Partition::Alpha(parse_list(key, v)?),
            "m" | "M" => self.partition = Partition::Fixed(parse_list(key, v)?),
            "eps-prob" => self.eps_prob = v.parse()?,
            "eps-prec" => self.eps_prec = v.parse()?,
            "bc" => {
                self.bc = match v {
                    "impedance" => BoundaryCondition::Impedance,
                    "dirichlet" => BoundaryCondition::Dirichlet,
                    _ => return Err(bad(key, v)),
                }
            }
            "start" => {
                self.start = match v {
                    "random" => StartRule::Random,
                    "zero" => StartRule::Zero,
                    _ => return Err(bad(key, v)),
                }
            }
            "seed" => self.seed = v.parse().map_err(|_| bad(key, v))?,
            "eta" => {
                self.eta = match v {
                    "k" | "sign-k" => EtaRule::SignK,
                    "sqrt" => EtaRule::SqrtShift,
                    _ => return Err(bad(key, v)),
                }
            }
            "tol" => self.tolerance = num(key)?,
            "max-it" => self.max_iterations = int(key)?,
            "c-fine" => self.c_fine = num(key)?,
            "inner" => {
                self.inner = match v {
                    "euclidean" => InnerRule::Euclidean,
                    "dk" => InnerRule::Energy,
                    _ => return Err(bad(key, v)),
                }
            }
            "workers" => self.workers = int(key)?,
            "max-nodes" => self.max_nodes = int(key)?,
            _ => return Err(RunnerError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text; `#` starts a comment. Keys that
    /// are not experiment options (like `out`) are returned untouched.
    pub fn apply_text(&mut self, text: &str) -> Result<Vec<(String, String)>, RunnerError> {
        let mut rest = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| RunnerError::Config(format!("expected `key = value`, got `{line}`")))?;
            match self.set(key.trim(), value.trim()) {
                Err(RunnerError::UnknownKey(_)) => rest.push((key.trim().to_string(), value.trim().to_string())),
                other => other?,
            }
        }
        Ok(rest)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.k_list.is_empty() || self.partition.len() == 0 {
            return Err(RunnerError::Config("empty k or alpha/M list".into()));
        }
        if self.k_list.iter().any(|&k| !(k >= 1.0)) {
            return Err(RunnerError::Config("wavenumbers must be at least 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) || self.max_iterations == 0 {
            return Err(RunnerError::Config("tolerance must lie in (0, 1) and max-it be positive".into()));
        }
        if !(self.c_fine > 0.0) {
            return Err(RunnerError::Config("c-fine must be positive".into()));
        }
        if let Partition::Alpha(a) = &self.partition {
            if a.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(RunnerError::Config("alpha must lie in [0, 1]".into()));
            }
        }
        if let Partition::Fixed(m) = &self.partition {
            if m.contains(&0) {
                return Err(RunnerError::Config("M must be positive".into()));
            }
        }
        for cell in self.cells() {
            self.eps_prob.resolve(cell.k, cell.alpha)?;
            self.eps_prec.resolve(cell.k, cell.alpha)?;
        }
        Ok(())
    }

    /// Cells in table order: `k` outer, alpha or `M` inner.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &k in &self.k_list {
            match &self.partition {
                Partition::Alpha(a) => out.extend(a.iter().map(|&x| Cell {
                    index: 0,
                    k,
                    alpha: Some(x),
                    coarse: None,
                })),
                Partition::Fixed(m) => out.extend(m.iter().map(|&c| Cell {
                    index: 0,
                    k,
                    alpha: None,
                    coarse: Some(c),
                })),
            }
        }
        for (i, c) in out.iter_mut().enumerate() {
            c.index = i;
        }
        out
    }

    fn grid_options(&self) -> GridOptions {
        GridOptions {
            c_fine: self.c_fine,
            max_nodes: self.max_nodes,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, RunnerError> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<T>().map_err(|_| bad(key, v)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub k: f64,
    pub alpha: Option<f64>,
    pub coarse: Option<usize>,
}

/// SplitMix64 step applied to `master + index * golden ratio`.
pub fn cell_seed(master: u64, index: usize) -> u64 {
    let mut z = master.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One row of an iteration-count table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub experiment: String,
    pub k: f64,
    pub alpha: Option<f64>,
    #[serde(rename = "M")]
    pub coarse_cells: usize,
    pub m_fine: usize,
    pub n: usize,
    pub eps_prob: f64,
    pub eps_prec: f64,
    pub bc: String,
    pub start: String,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub wall_ms: u64,
    #[serde(skip)]
    pub error: Option<String>,
}

/// Objects shared by all cells of one grid: mesh, decomposition, operators.
pub struct CellProblem {
    pub coarse: CoarseGrid,
    pub fine: FineMesh,
    pub decomp: SubdomainDecomposition,
    pub ops: GlobalOperators,
    pub rhs: Vec<Complex64>,
}

impl CellProblem {
    pub fn build(config: &ExperimentConfig, cell: &Cell) -> Result<Self, RunnerError> {
        let opts = config.grid_options();
        let (coarse, fine) = match (cell.alpha, cell.coarse) {
            (Some(a), _) => build_grids(cell.k, a, &opts),
            (None, Some(m)) => build_grids_fixed(cell.k, m, &opts),
            (None, None) => return Err(RunnerError::Config("cell without alpha or M".into())),
        }
        .map_err(|e| RunnerError::Cell(e.to_string()))?;
        let decomp = SubdomainDecomposition::build(&coarse, &fine).map_err(|e| RunnerError::Cell(e.to_string()))?;
        let eps = config.eps_prob.resolve(cell.k, cell.alpha)?;
        let eta = config.eta.eta(cell.k, eps);
        let ops = GlobalOperators::assemble(&fine, cell.k, eps, eta).map_err(|e| RunnerError::Cell(e.to_string()))?;
        let rhs = assemble_rhs_planewave(&fine, &ops.forms, cell.k, eps, eta, DIRECTION)
            .map_err(|e| RunnerError::Cell(e.to_string()))?;
        Ok(Self {
            coarse,
            fine,
            decomp,
            ops,
            rhs,
        })
    }

    pub fn preconditioner(&self, config: &ExperimentConfig, cell: &Cell) -> Result<SchwarzPreconditioner, RunnerError> {
        let eps = config.eps_prec.resolve(cell.k, cell.alpha)?;
        let eta = config.eta.eta(cell.k, eps);
        SchwarzPreconditioner::assemble(&self.fine, &self.decomp, cell.k, eps, eta, config.bc)
            .map_err(|e| RunnerError::Cell(e.to_string()))
    }

    /// Runs GMRES with the given preconditioner and returns the table row.
    pub fn solve(
        &self,
        config: &ExperimentConfig,
        cell: &Cell,
        precond: &SchwarzPreconditioner,
    ) -> Result<CellResult, RunnerError> {
        let started = Instant::now();
        let seed = cell_seed(config.seed, cell.index);
        let gcfg = GmresConfig {
            tolerance: config.tolerance,
            max_iterations: config.max_iterations,
            start: match config.start {
                StartRule::Random => Start::Random(seed),
                StartRule::Zero => Start::Zero,
            },
            ..Default::default()
        };
        let inner = match config.inner {
            InnerRule::Euclidean => InnerProduct::Euclidean,
            InnerRule::Energy => InnerProduct::Weighted(&self.ops.energy),
        };
        let res = gmres(&self.ops.system, Some(precond), &self.rhs, inner, &gcfg)
            .map_err(|e| RunnerError::Cell(e.to_string()))?;
        let mut row = self.row(config, cell)?;
        row.iterations = res.iterations;
        row.converged = res.converged;
        row.final_residual = res.final_relative_residual;
        row.wall_ms = started.elapsed().as_millis() as u64;
        Ok(row)
    }

    fn row(&self, config: &ExperimentConfig, cell: &Cell) -> Result<CellResult, RunnerError> {
        Ok(CellResult {
            n: self.fine.num_nodes(),
            m_fine: self.fine.cells_per_side(),
            coarse_cells: self.coarse.cells_per_side(),
            ..empty_row(config, cell)?
        })
    }
}

fn empty_row(config: &ExperimentConfig, cell: &Cell) -> Result<CellResult, RunnerError> {
    Ok(CellResult {
        experiment: config.experiment.to_string(),
        k: cell.k,
        alpha: cell.alpha,
        coarse_cells: cell.coarse.unwrap_or(0),
        m_fine: 0,
        n: 0,
        eps_prob: config.eps_prob.resolve(cell.k, cell.alpha)?,
        eps_prec: config.eps_prec.resolve(cell.k, cell.alpha)?,
        bc: bc_name(config.bc).into(),
        start: config.start.to_string(),
        seed: cell_seed(config.seed, cell.index),
        iterations: 0,
        converged: false,
        final_residual: f64::NAN,
        wall_ms: 0,
        error: None,
    })
}

/// Builds, preconditions and solves one cell.
pub fn run_cell(config: &ExperimentConfig, cell: &Cell) -> Result<CellResult, RunnerError> {
    let started = Instant::now();
    let problem = CellProblem::build(config, cell)?;
    let precond = problem.preconditioner(config, cell)?;
    let mut row = problem.solve(config, cell, &precond)?;
    row.wall_ms = started.elapsed().as_millis() as u64;
    Ok(row)
}

/// Runs every cell; a failing cell is recorded with its error and does not
/// abort the table.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<CellResult>, RunnerError> {
    config.validate()?;
    let cells = config.cells();
    let work = |cell: &Cell| -> CellResult {
        log::info!("{} cell k = {} {:?}/{:?}", config.experiment, cell.k, cell.alpha, cell.coarse);
        let started = Instant::now();
        match run_cell(config, cell) {
            Ok(r) => r,
            Err(e) => {
                log::error!("cell {} failed: {e}", cell.index);
                let mut row = empty_row(config, cell).expect("validated rules");
                row.error = Some(e.to_string());
                row.wall_ms = started.elapsed().as_millis() as u64;
                row
            }
        }
    };
    if config.workers <= 1 {
        return Ok(cells.iter().map(work).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| RunnerError::Config(e.to_string()))?;
    Ok(pool.install(|| cells.par_iter().map(work).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl FromStr for TableFormat {
    type Err = RunnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "md" | "markdown" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            _ => Err(bad("out", s)),
        }
    }
}

fn column_label(r: &CellResult) -> String {
    match r.alpha {
        Some(a) => format!("{a}"),
        None => format!("{}", r.coarse_cells),
    }
}

/// Markdown grid (k rows, alpha or M columns) or CSV with one row per cell.
pub fn emit_table(results: &[CellResult], format: TableFormat) -> Result<String, RunnerError> {
    if results.is_empty() {
        return Err(RunnerError::Empty);
    }
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in results {
                w.serialize(r)?;
            }
            let bytes = w.into_inner().map_err(|e| RunnerError::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        TableFormat::Markdown => {
            let mut rows: Vec<f64> = Vec::new();
            let mut cols: Vec<String> = Vec::new();
            let mut grid: BTreeMap<(usize, usize), String> = BTreeMap::new();
            for r in results {
                let i = rows.iter().position(|&k| k == r.k).unwrap_or_else(|| {
                    rows.push(r.k);
                    rows.len() - 1
                });
                let label = column_label(r);
                let j = cols.iter().position(|c| *c == label).unwrap_or_else(|| {
                    cols.push(label);
                    cols.len() - 1
                });
                let text = if r.error.is_some() {
                    "fail".to_string()
                } else if r.converged {
                    r.iterations.to_string()
                } else {
                    format!(">{}", r.iterations)
                };
                grid.insert((i, j), text);
            }
            let corner = if results[0].alpha.is_some() { "k \\ alpha" } else { "k \\ M" };
            let mut s = format!("| {corner} |");
            for c in &cols {
                s.push_str(&format!(" {c} |"));
            }
            s.push('\n');
            s.push_str(&"|---".repeat(cols.len() + 1));
            s.push_str("|\n");
            for (i, k) in rows.iter().enumerate() {
                s.push_str(&format!("| {k} |"));
                for j in 0..cols.len() {
                    s.push_str(&format!(" {} |", grid.get(&(i, j)).map(String::as_str).unwrap_or("")));
                }
                s.push('\n');
            }
            Ok(s)
        }
    }
}

/// Parses CSV produced by [`emit_table`].
pub fn parse_csv(text: &str) -> Result<Vec<CellResult>, RunnerError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    Ok(rd.deserialize().collect::<Result<Vec<CellResult>, _>>()?)
}

/// Diagnostic sweep settings.
#[derive(Debug, Clone)]
pub struct TheorySweep {
    pub k_list: Vec<f64>,
    pub partition: Partition,
    pub eps: EpsRule,
    pub c_fine: f64,
    pub options: TheoryOptions,
}

impl Default for TheorySweep {
    fn default() -> Self {
        Self {
            k_list: vec![5.0, 10.0, 20.0],
            partition: Partition::Alpha(vec![0.3]),
            eps: EpsRule::KPower(2.0),
            c_fine: 0.5,
            options: TheoryOptions::default(),
        }
    }
}

impl TheorySweep {
    fn grids(&self, k: f64, alpha: Option<f64>, coarse: Option<usize>) -> Result<(FineMesh, SubdomainDecomposition), RunnerError> {
        let opts = GridOptions {
            c_fine: self.c_fine,
            ..Default::default()
        };
        let (c, f) = match (alpha, coarse) {
            (Some(a), _) => build_grids(k, a, &opts),
            (_, Some(m)) => build_grids_fixed(k, m, &opts),
            _ => return Err(RunnerError::Config("cell without alpha or M".into())),
        }
        .map_err(|e| RunnerError::Cell(e.to_string()))?;
        let d = SubdomainDecomposition::build(&c, &f).map_err(|e| RunnerError::Cell(e.to_string()))?;
        Ok((f, d))
    }

    fn cells(&self) -> Vec<(f64, Option<f64>, Option<usize>)> {
        let mut out = Vec::new();
        for &k in &self.k_list {
            match &self.partition {
                Partition::Alpha(a) => out.extend(a.iter().map(|&x| (k, Some(x), None))),
                Partition::Fixed(m) => out.extend(m.iter().map(|&c| (k, None, Some(c)))),
            }
        }
        out
    }

    /// One theory report per cell, in table order.
    pub fn run(&self) -> Result<Vec<TheoryReport>, RunnerError> {
        self.cells()
            .into_iter()
            .map(|(k, alpha, coarse)| {
                let (fine, decomp) = self.grids(k, alpha, coarse)?;
                let eps = self.eps.resolve(k, alpha)?;
                log::info!("theory report k = {k}, eps = {eps}, n = {}", fine.num_nodes());
                Ok(diag::theory_report(&fine, &decomp, k, eps, &self.options)?)
            })
            .collect()
    }

    /// Shift scan at each `k` with shifts `0, k/8, k/4, k/2`.
    pub fn perturbation(&self, fov: &FovOptions) -> Result<Vec<PerturbationReport>, RunnerError> {
        self.cells()
            .into_iter()
            .map(|(k, alpha, coarse)| {
                let (fine, decomp) = self.grids(k, alpha, coarse)?;
                let eps = [0.0, k / 8.0, k / 4.0, k / 2.0];
                Ok(diag::perturbation_scan(&fine, &decomp, k, &eps, fov)?)
            })
            .collect()
    }
}
