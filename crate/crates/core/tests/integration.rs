mod common;

use common::{gmres_direct_error, random_vector, rel_diff};
use helmholtz_dd::assemble::{assemble_local, BoundaryCondition, EtaRule, GlobalOperators};
use helmholtz_dd::diag::{
    self, estimate_sigma, norm_and_fov, EnergySpace, FovOptions, SigmaOptions, TheoryOptions,
};
use helmholtz_dd::grid::{build_grids_fixed, FineMesh, GridOptions, SubdomainDecomposition};
use helmholtz_dd::krylov::{gmres, GmresConfig, InnerProduct, Start};
use helmholtz_dd::operator::{LinearOperator, Product};
use helmholtz_dd::runner::{run_experiment, Experiment, ExperimentConfig, Partition};
use helmholtz_dd::schwarz::SchwarzPreconditioner;
use helmholtz_dd::sparsela::CsrMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_problem(k: f64, coarse: usize, c_fine: f64) -> (FineMesh, SubdomainDecomposition) {
    let opts = GridOptions {
        c_fine,
        ..Default::default()
    };
    let (c, f) = build_grids_fixed(k, coarse, &opts).unwrap();
    let d = SubdomainDecomposition::build(&c, &f).unwrap();
    (f, d)
}

/// Each local component `W_l = A_l^{-1} R_l A V` satisfies
/// `a_l(w_l, phi_q) = chi_l(x_q) a(v, phi_q)` at every free local node.
#[test]
fn local_components_reproduce_weighted_global_residuals() {
    let k = 8.0;
    let (fine, decomp) = small_problem(k, 3, 1.0);
    let eta = Complex64::new(k, 0.0);
    let ops = GlobalOperators::assemble(&fine, k, k, eta).unwrap();
    let v = random_vector(fine.num_nodes(), 17);
    let av = ops.system.spmv(&v).unwrap();
    for bc in [BoundaryCondition::Impedance, BoundaryCondition::Dirichlet] {
        let pre = SchwarzPreconditioner::assemble(&fine, &decomp, k, k, eta, bc).unwrap();
        for (sd, local) in decomp.subdomains().iter().zip(pre.locals()) {
            let sys = assemble_local(&fine, sd, k, k, eta, bc).unwrap();
            let w = local.solve(&local.restrict(&av)).unwrap();
            let lhs = sys.matrix.spmv(&w).unwrap();
            let rhs: Vec<Complex64> = sys.dofs.iter().map(|&q| av[sd.nodes[q]] * sd.weights[q]).collect();
            assert!(rel_diff(&lhs, &rhs) < 1e-10, "{:?} {bc:?}", sd.id);
        }
    }
}

#[test]
fn gmres_solution_matches_direct_solve() {
    let tol = 1e-8;
    let (err, tol) = gmres_direct_error(8.0, 2, tol);
    assert!(err <= 10.0 * tol, "{err}");
}

#[test]
fn whole_domain_preconditioner_needs_one_iteration() {
    let k = 10.0;
    let fine = FineMesh::new(20).unwrap();
    let decomp = SubdomainDecomposition::whole_domain(&fine);
    let eta = Complex64::new(k, 0.0);
    let ops = GlobalOperators::assemble(&fine, k, 0.0, eta).unwrap();
    let pre = SchwarzPreconditioner::assemble(&fine, &decomp, k, 0.0, eta, BoundaryCondition::Impedance).unwrap();
    let b = random_vector(fine.num_nodes(), 9);
    let cfg = GmresConfig {
        start: Start::Random(4),
        ..Default::default()
    };
    let res = gmres(&ops.system, Some(&pre), &b, InnerProduct::Euclidean, &cfg).unwrap();
    assert!(res.converged);
    assert_eq!(res.iterations, 1);
}

#[test]
fn iteration_counts_do_not_depend_on_thread_count() {
    let mut cfg = ExperimentConfig::preset(Experiment::E4);
    cfg.k_list = vec![10.0, 16.0];
    cfg.partition = Partition::Alpha(vec![0.3, 0.5]);
    let run_with = |threads: usize, workers: usize| {
        let mut c = cfg.clone();
        c.workers = workers;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_experiment(&c).unwrap())
    };
    let a = run_with(1, 1);
    let b = run_with(3, 2);
    let c = run_with(2, 1);
    for ((x, y), z) in a.iter().zip(&b).zip(&c) {
        assert_eq!(x.iterations, y.iterations);
        assert_eq!(x.iterations, z.iterations);
        assert_eq!(x.final_residual.to_bits(), y.final_residual.to_bits());
        assert_eq!(x.seed, y.seed);
    }
}

#[test]
fn single_cell_coarse_grid_beats_small_subdomains() {
    let mut cfg = ExperimentConfig::preset(Experiment::E4);
    cfg.k_list = vec![20.0];
    cfg.partition = Partition::Alpha(vec![0.0, 0.5]);
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows[0].coarse_cells, 1);
    assert!(rows.iter().all(|r| r.converged));
    assert!(rows[0].iterations < rows[1].iterations, "{} vs {}", rows[0].iterations, rows[1].iterations);
}

#[test]
fn random_and_zero_starts_both_converge() {
    let mut cfg = ExperimentConfig::preset(Experiment::E5);
    cfg.k_list = vec![12.0];
    cfg.partition = Partition::Fixed(vec![4]);
    let random = run_experiment(&cfg).unwrap();
    cfg.start = helmholtz_dd::runner::StartRule::Zero;
    let zero = run_experiment(&cfg).unwrap();
    assert!(random[0].converged && zero[0].converged);
    eprintln!("random start: {} iterations, zero start: {}", random[0].iterations, zero[0].iterations);
}

#[test]
fn sigma_decreases_with_stronger_absorption() {
    let k = 10.0;
    let (fine, decomp) = small_problem(k, 2, 0.5);
    let sigma = |eps: f64| {
        let eta = EtaRule::SignK.eta(k, eps);
        let ops = GlobalOperators::assemble(&fine, k, eps, eta).unwrap();
        let pre = SchwarzPreconditioner::assemble(&fine, &decomp, k, eps, eta, BoundaryCondition::Impedance).unwrap();
        let space = EnergySpace::new(&ops.energy).unwrap();
        let s = estimate_sigma(&fine, &decomp, &ops.system, &pre, &space, k, &SigmaOptions::default()).unwrap();
        s.into_iter().fold(0.0, f64::max)
    };
    let weak = sigma(k);
    let strong = sigma(k * k);
    assert!(strong < weak, "{strong} vs {weak}");
}

/// Random-direction descent on `|v^* D T v| / v^* D v`: each step minimizes
/// over unit vectors in the span of the current best vector and a random
/// direction, so every value is attained by an actual vector.
fn random_search_distance(t: &dyn LinearOperator, d: &CsrMatrix, samples: usize, seed: u64) -> f64 {
    let n = t.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dot = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>();
    let images = |v: &[Complex64]| (d.spmv(&t.apply_vec(v).unwrap()).unwrap(), d.spmv(v).unwrap());
    let mut v = random_vector(n, rng.random());
    let (mut dtv, mut dv) = images(&v);
    let mut best = (dot(&v, &dtv) / dot(&v, &dv).re).norm();
    let scales: Vec<f64> = (1..24)
        .map(|a| std::f64::consts::FRAC_PI_2 * a as f64 / 24.0)
        .chain((0..16).map(|j| 0.05 * 0.5f64.powi(j)))
        .collect();
    for _ in 1..samples {
        let u = random_vector(n, rng.random());
        let (dtu, du) = images(&u);
        let basis = [&v, &u];
        let dtb = [&dtv, &dtu];
        let db = [&dv, &du];
        let mut p = [[Complex64::new(0.0, 0.0); 2]; 2];
        let mut g = [[Complex64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                p[i][j] = dot(basis[i], dtb[j]);
                g[i][j] = dot(basis[i], db[j]);
            }
        }
        let mut pick = None;
        for &s in &scales {
            for b in 0..24 {
                let phase = Complex64::from_polar(1.0, std::f64::consts::TAU * b as f64 / 24.0);
                let c = [Complex64::new(s.cos(), 0.0), phase * s.sin()];
                let mut num = Complex64::new(0.0, 0.0);
                let mut den = Complex64::new(0.0, 0.0);
                for i in 0..2 {
                    for j in 0..2 {
                        num += c[i].conj() * p[i][j] * c[j];
                        den += c[i].conj() * g[i][j] * c[j];
                    }
                }
                let val = (num / den.re).norm();
                if val < best {
                    best = val;
                    pick = Some(c);
                }
            }
        }
        if let Some(c) = pick {
            let comb = |a: &[Complex64], b: &[Complex64]| -> Vec<Complex64> {
                a.iter().zip(b).map(|(x, y)| c[0] * x + c[1] * y).collect()
            };
            v = comb(&v, &u);
            dtv = comb(&dtv, &dtu);
            dv = comb(&dv, &du);
        }
    }
    best
}

#[test]
fn fov_sweep_agrees_with_random_search() {
    let k = 10.0;
    let (fine, decomp) = small_problem(k, 2, 0.5);
    let eta = Complex64::new(k, 0.0);
    let ops = GlobalOperators::assemble(&fine, k, k, eta).unwrap();
    let pre = SchwarzPreconditioner::assemble(&fine, &decomp, k, k, eta, BoundaryCondition::Impedance).unwrap();
    let space = EnergySpace::new(&ops.energy).unwrap();
    let t = Product::new(&pre, &ops.system);
    let sweep = norm_and_fov(&t, &space, &FovOptions::default()).unwrap();
    let search = random_search_distance(&t, &ops.energy, 100_000, 21);
    assert!(sweep.fov_distance > 0.0);
    assert!(search >= sweep.fov_lower * (1.0 - 1e-9), "{search} vs {}", sweep.fov_lower);
    assert!((search - sweep.fov_distance).abs() <= 0.1 * sweep.fov_distance, "{search} vs {}", sweep.fov_distance);
}

#[test]
fn composite_bounds_hold_for_measured_values() {
    let k = 8.0;
    let (fine, decomp) = small_problem(k, 2, 1.0);
    let opts = FovOptions {
        angles: 180,
        ..Default::default()
    };
    let r = diag::perturbation_scan(&fine, &decomp, k, &[0.0, k / 8.0, k / 4.0, k / 2.0], &opts).unwrap();
    assert_eq!(r.norms[0], 0.0);
    for i in 0..r.eps.len() {
        assert!(r.measured_norm[i] <= r.upper_bound[i] * (1.0 + 1e-8));
        assert!(r.measured_fov[i] >= r.lower_bound[i] - 1e-8);
    }
}

#[test]
fn theory_report_invariants() {
    let k = 6.0;
    let (fine, decomp) = small_problem(k, 2, 1.0);
    let opts = TheoryOptions {
        euclidean: true,
        fov: FovOptions {
            angles: 120,
            ..Default::default()
        },
        ..Default::default()
    };
    let r = diag::theory_report(&fine, &decomp, k, k * k, &opts).unwrap();
    assert_eq!(r.lambda, 4);
    assert_eq!(r.sigma_per_subdomain.len(), 9);
    assert!(r.sigma >= 0.0 && r.norm_dk >= 0.0 && r.fov_distance >= 0.0);
    assert!(r.fov_distance <= r.norm_dk);
    assert!((r.theoretical_upper - 4.0 * (1.0 + r.sigma)).abs() < 1e-12);
    assert!(r.norm_euclidean.is_some() && r.fov_euclidean.is_some());
}

#[test]
fn imported_matrices_give_identity_quantities() {
    let k = 4.0;
    let fine = FineMesh::new(6).unwrap();
    let ops = GlobalOperators::assemble(&fine, k, k, Complex64::new(k, 0.0)).unwrap();
    let dir = std::env::temp_dir().join(format!("hdd-import-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let write = |name: &str, m: &CsrMatrix| {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        m.write_coordinate(&mut f).unwrap();
        p
    };
    let pa = write("a.txt", &ops.system);
    let pd = write("d.txt", &ops.energy);
    let a = diag::load_matrix(&pa).unwrap();
    let d = diag::load_matrix(&pd).unwrap();
    let r = diag::norm_and_fov_imported(&a, &a, &d, &FovOptions { angles: 36, ..Default::default() }).unwrap();
    assert!((r.norm - 1.0).abs() < 1e-8);
    assert!((r.fov_distance - 1.0).abs() < 1e-8);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn command_line_run_produces_parsable_csv() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_helmholtz-dd"))
        .args(["run", "--experiment", "E2", "--k", "6", "--alpha", "0.2,0.5", "--out", "csv", "--seed", "3"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = helmholtz_dd::runner::parse_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.converged && r.experiment == "E2"));
}

#[test]
fn command_line_config_file_is_overridden_by_flags() {
    let dir = std::env::temp_dir().join(format!("hdd-config-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("table.cfg");
    std::fs::write(&cfg, "experiment = E4\nk = 6\nalpha = 0.2\nout = csv\nseed = 1\n").unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_helmholtz-dd"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--alpha", "0.5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = helmholtz_dd::runner::parse_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].alpha, Some(0.5));
    assert_eq!(rows[0].experiment, "E4");
    assert_eq!(rows[0].eps_prob, 0.0);
    std::fs::remove_dir_all(&dir).unwrap();
}
