use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use helmholtz_dd::assemble::BoundaryCondition;
use helmholtz_dd::diag::{self, FovOptions, OperatorQuantities, TheoryOptions, TheoryReport};
use helmholtz_dd::runner::{
    emit_table, run_experiment, EpsRule, Experiment, ExperimentConfig, Partition, RunnerError, TableFormat,
    TheorySweep,
};

#[derive(Parser)]
#[command(name = "helmholtz-dd", version, about = "Additive Schwarz experiments for the Helmholtz equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an iteration-count experiment and print the table.
    Run(RunArgs),
    /// Evaluate the theory diagnostics.
    Diag(DiagArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Flat `key = value` file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// Fixed coarse cells per side (replaces alpha).
    #[arg(long = "m")]
    m: Option<String>,
    #[arg(long)]
    eps_prob: Option<String>,
    #[arg(long)]
    eps_prec: Option<String>,
    #[arg(long)]
    bc: Option<String>,
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    max_it: Option<String>,
    #[arg(long)]
    c_fine: Option<String>,
    #[arg(long)]
    inner: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    /// `md` or `csv`.
    #[arg(long)]
    out: Option<String>,
    /// Write the table to a file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Report {
    Sigma,
    Fov,
    Perturb,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiagFormat {
    Kv,
    Csv,
}

#[derive(clap::Args)]
struct DiagArgs {
    #[arg(long, default_value = "5,10,20")]
    k: String,
    #[arg(long, default_value = "0.3")]
    alpha: String,
    /// Fixed coarse cells per side (replaces alpha).
    #[arg(long = "m")]
    m: Option<String>,
    /// Shift rule: 0, k, k1b, k2, k^p, <c>k or a number.
    #[arg(long, default_value = "k2")]
    eps: String,
    #[arg(long, value_enum, default_value = "fov")]
    report: Report,
    #[arg(long, default_value_t = 0.5)]
    c_fine: f64,
    #[arg(long, default_value = "impedance")]
    bc: String,
    /// Also report norm and field of values in the Euclidean inner product.
    #[arg(long)]
    euclidean: bool,
    #[arg(long, default_value_t = 720)]
    angles: usize,
    #[arg(long, value_enum, default_value = "kv")]
    out: DiagFormat,
    /// Coordinate-format matrices `A`, `B` and `D`: report norm and field
    /// of values of `B^{-1} A` in the `D` inner product.
    #[arg(long, num_args = 3, value_names = ["A", "B", "D"])]
    import: Option<Vec<PathBuf>>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Diag(args) => run_diag(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: RunArgs) -> Result<(), RunnerError> {
    let file_text = match &args.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let file_experiment = file_text
        .lines()
        .filter_map(|l| l.split('#').next()?.split_once('='))
        .find(|(k, _)| k.trim() == "experiment")
        .map(|(_, v)| v.trim().to_string());
    let experiment: Experiment = args
        .experiment
        .clone()
        .or(file_experiment)
        .unwrap_or_else(|| "E2".into())
        .parse()?;
    let mut config = ExperimentConfig::preset(experiment);
    let mut out = "md".to_string();
    for (k, v) in config.apply_text(&file_text)? {
        match k.as_str() {
            "out" => out = v,
            _ => return Err(RunnerError::UnknownKey(k)),
        }
    }
    let flags = [
        ("k", &args.k),
        ("alpha", &args.alpha),
        ("m", &args.m),
        ("eps-prob", &args.eps_prob),
        ("eps-prec", &args.eps_prec),
        ("bc", &args.bc),
        ("start", &args.start),
        ("seed", &args.seed),
        ("eta", &args.eta),
        ("tol", &args.tol),
        ("max-it", &args.max_it),
        ("c-fine", &args.c_fine),
        ("inner", &args.inner),
        ("workers", &args.workers),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    if let Some(o) = args.out {
        out = o;
    }
    let format: TableFormat = out.parse()?;
    let rows = run_experiment(&config)?;
    let text = emit_table(&rows, format)?;
    match args.output {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("k = {} {:?}/{}: {}", r.k, r.alpha, r.coarse_cells, r.error.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn run_diag(args: DiagArgs) -> Result<(), RunnerError> {
    let fov = FovOptions {
        angles: args.angles,
        ..Default::default()
    };
    if let Some(paths) = &args.import {
        let a = diag::load_matrix(&paths[0])?;
        let b = diag::load_matrix(&paths[1])?;
        let d = diag::load_matrix(&paths[2])?;
        let r = diag::norm_and_fov_imported(&a, &b, &d, &fov)?;
        println!("norm = {:.6e}", r.norm);
        println!("fov_distance = {:.6e}", r.fov_distance);
        println!("fov_lower = {:.6e}", r.fov_lower);
        return Ok(());
    }
    let k_list = parse_floats("k", &args.k)?;
    let partition = match &args.m {
        Some(m) => Partition::Fixed(
            m.split(',')
                .map(|s| s.trim().parse().map_err(|_| bad("m", m)))
                .collect::<Result<_, _>>()?,
        ),
        None => Partition::Alpha(parse_floats("alpha", &args.alpha)?),
    };
    let bc = match args.bc.as_str() {
        "impedance" => BoundaryCondition::Impedance,
        "dirichlet" => BoundaryCondition::Dirichlet,
        other => return Err(bad("bc", other)),
    };
    let eps: EpsRule = args.eps.parse()?;
    let (with_sigma, operator) = match args.report {
        Report::Sigma => (true, OperatorQuantities::Norm),
        Report::Fov | Report::Perturb => (true, OperatorQuantities::NormAndFov),
    };
    let sweep = TheorySweep {
        k_list,
        partition,
        eps,
        c_fine: args.c_fine,
        options: TheoryOptions {
            bc,
            fov,
            with_sigma,
            operator,
            euclidean: args.euclidean,
            ..Default::default()
        },
    };
    match args.report {
        Report::Perturb => {
            for r in sweep.perturbation(&fov)? {
                match args.out {
                    DiagFormat::Kv => println!("{}", r.to_key_value()),
                    DiagFormat::Csv => r.write_csv(std::io::stdout()).map_err(RunnerError::Diag)?,
                }
            }
        }
        Report::Sigma | Report::Fov => {
            let reports = sweep.run()?;
            match args.out {
                DiagFormat::Kv => {
                    for r in &reports {
                        println!("{}", r.to_key_value());
                    }
                }
                DiagFormat::Csv => TheoryReport::write_csv(&reports, std::io::stdout())?,
            }
        }
    }
    Ok(())
}

fn bad(key: &str, value: &str) -> RunnerError {
    RunnerError::BadValue {
        key: key.into(),
        value: value.into(),
    }
}

fn parse_floats(key: &str, s: &str) -> Result<Vec<f64>, RunnerError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| bad(key, s)))
        .collect()
}
