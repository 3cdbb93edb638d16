//! Command-line front end: dataset simulation, single-shot estimation, Monte
//! Carlo runs and the bundled benchmark reproduction scenarios.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! On failure a single machine-readable line is written to standard error:
//! `error: kind=<usage|data|numerical> msg="..."`.

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use plsa_core::montecarlo::{
    parse_config, parse_model_config, render_records_csv, render_summary_csv, render_tables,
    run_mc, McConfig, McRun, ModelSpec,
};
use plsa_core::{cox, diffusion, Error as CoreError, TuningConfig};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "plsa",
    version,
    about = "Penalized least-squares-approximation estimators for point-process and diffusion models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Cox,
    Diffusion,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Qmle,
    Plsa,
    Po,
}

#[derive(Clone, Copy, ValueEnum)]
enum GMat {
    Identity,
    Hessian,
    Moment,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableId {
    Table1,
    Table2,
    Table3,
    Table4,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset and write it as CSV files.
    Simulate {
        #[arg(value_enum)]
        model: ModelKind,
        /// Model configuration file (flat key = value).
        #[arg(long)]
        config: PathBuf,
        /// Base seed for the simulation streams.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory (covariates.csv + events.csv, or sample.csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an estimator to a simulated dataset and write the estimate vector
    /// and active set as CSV.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Directory holding the dataset CSV files.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Adaptive-weight exponent gamma (plsa/po).
        #[arg(long)]
        gamma: Option<f64>,
        /// Penalty-level exponent r (plsa/po).
        #[arg(long)]
        r: Option<f64>,
        /// Penalty power q in (0, 1] (plsa/po).
        #[arg(long)]
        q: Option<f64>,
        /// Weighting matrix for the penalized objective (plsa).
        #[arg(long, value_enum, default_value = "identity")]
        gmat: GMat,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Monte Carlo replication harness from a configuration file.
    Mc {
        #[arg(long)]
        config: PathBuf,
        /// Override the replication count from the config.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the base seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (output does not depend on this).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a bundled benchmark scenario at its standard settings.
    Reproduce {
        #[arg(value_enum)]
        table: TableId,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Numerical(m) => CliError::Numerical(m),
            CoreError::Data(m) => CliError::Data(m),
            CoreError::InvalidInput(m) => CliError::Data(m),
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => {
                    let _ = e.print();
                    std::process::exit(0);
                }
                _ => 1,
            };
            let _ = e.print();
            eprintln!("error: kind=usage msg=\"invalid command line\"");
            std::process::exit(code);
        }
    };
    match run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: kind={} msg={:?}", e.kind(), e.message());
            std::process::exit(e.exit_code());
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Data(format!("create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("write {}: {e}", path.display())))
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { model, config, seed, out } => simulate(model, &config, seed, &out),
        Command::Fit { config, data, method, gamma, r, q, gmat, out } => {
            fit(&config, &data, method, gamma, r, q, gmat, &out)
        }
        Command::Mc { config, reps, seed, out, threads } => {
            let text = read_text(&config)?;
            let mut cfg = parse_config(&text)?;
            if let Some(reps) = reps {
                cfg.reps = reps;
            }
            if let Some(seed) = seed {
                cfg.base_seed = seed;
            }
            run_harness(&cfg, threads, &out)
        }
        Command::Reproduce { table, reps, seed, out, threads } => {
            let cfg = match table {
                TableId::Table1 => McConfig::table1(reps, seed),
                TableId::Table2 => McConfig::table2(reps, seed),
                TableId::Table3 => McConfig::table3(reps, seed),
                TableId::Table4 => McConfig::table4(reps, seed),
            };
            run_harness(&cfg, threads, &out)
        }
    }
}

fn simulate(kind: ModelKind, config: &Path, seed: u64, out: &Path) -> Result<(), CliError> {
    let spec = parse_model_config(&read_text(config)?)?;
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Data(format!("create {}: {e}", out.display())))?;
    match (kind, &spec) {
        (ModelKind::Cox, ModelSpec::Cox(model)) => {
            let sample = cox::simulate(model, seed, 0)?;
            cox::write_sample_dir(&sample, out)?;
            println!(
                "wrote {} and {} ({} events)",
                out.join("covariates.csv").display(),
                out.join("events.csv").display(),
                sample.event_count()
            );
            Ok(())
        }
        (ModelKind::Diffusion, ModelSpec::Diffusion(model)) => {
            let sample = diffusion::simulate(model, seed, 0)?;
            diffusion::write_sample_csv(model, &sample, &out.join("sample.csv"))?;
            println!("wrote {}", out.join("sample.csv").display());
            Ok(())
        }
        _ => Err(CliError::Usage(
            "requested model kind does not match the configuration file".to_string(),
        )),
    }
}

fn tuning_from_flags(
    gamma: Option<f64>,
    r: Option<f64>,
    q: Option<f64>,
    rate: f64,
) -> Result<TuningConfig, CliError> {
    let (Some(gamma), Some(r), Some(q)) = (gamma, r, q) else {
        return Err(CliError::Usage(
            "--gamma, --r and --q are required for plsa and po fits".to_string(),
        ));
    };
    TuningConfig::new(gamma, r, q, rate)
        .map_err(|e| CliError::Usage(format!("invalid tuning: {e}")))
}

fn write_estimate_csv(
    out: &Path,
    estimate: &DVector<f64>,
    active: &[bool],
) -> Result<(), CliError> {
    let mut text = String::from("coordinate,estimate,active\n");
    for j in 0..estimate.len() {
        let _ = writeln!(text, "{},{},{}", j + 1, estimate[j], u8::from(active[j]));
    }
    write_text(out, &text)
}

#[allow(clippy::too_many_arguments)]
fn fit(
    config: &Path,
    data: &Path,
    method: Method,
    gamma: Option<f64>,
    r: Option<f64>,
    q: Option<f64>,
    gmat: GMat,
    out: &Path,
) -> Result<(), CliError> {
    let spec = parse_model_config(&read_text(config)?)?;
    match spec {
        ModelSpec::Cox(mut model) => {
            let sample = cox::read_sample_dir(data, model.n_marks)?;
            if sample.covariates.ncols() != model.n_covariates {
                return Err(CliError::Data(format!(
                    "dataset has {} covariates, configuration expects {}",
                    sample.covariates.ncols(),
                    model.n_covariates
                )));
            }
            if (sample.grid_step - model.grid_step).abs() > 1e-9 * model.grid_step {
                return Err(CliError::Data(format!(
                    "dataset grid step {} does not match configuration {}",
                    sample.grid_step, model.grid_step
                )));
            }
            // The dataset determines the horizon.
            model.horizon = sample.horizon();
            let p = model.dim();
            let lower = DVector::from_element(p, -10.0);
            let upper = DVector::from_element(p, 10.0);
            let tilde = cox::qmle(&model, &sample, &DVector::zeros(p), &lower, &upper)?.theta;
            let rate = 1.0 / model.horizon.sqrt();
            match method {
                Method::Qmle => {
                    let active: Vec<bool> = tilde.iter().map(|v| *v != 0.0).collect();
                    write_estimate_csv(out, &tilde, &active)
                }
                Method::Plsa => {
                    let cfg = tuning_from_flags(gamma, r, q, rate)?;
                    let g_hat = match gmat {
                        GMat::Identity => DMatrix::identity(p, p),
                        GMat::Hessian => cox::g_hat_hessian(&model, &sample, &tilde)?,
                        GMat::Moment => cox::g_hat_moment(&model, &sample, &tilde)?,
                    };
                    let solution = solve_plsa(&tilde, g_hat, &cfg, &lower, &upper, matches!(gmat, GMat::Identity))?;
                    write_estimate_csv(out, &solution.theta_hat, &solution.active)
                }
                Method::Po => {
                    let cfg = tuning_from_flags(gamma, r, q, rate)?;
                    let loss = cox::CoxLoss::new(&model, &sample)?;
                    let result = plsa_core::po_estimate(&tilde, &cfg, &loss, &lower, &upper)?;
                    let active: Vec<bool> =
                        (0..p).map(|j| !result.selected_zero_set.contains(&j)).collect();
                    write_estimate_csv(out, &result.theta_check, &active)
                }
            }
        }
        ModelSpec::Diffusion(mut model) => {
            let sample = diffusion::read_sample_csv(&data.join("sample.csv"))?;
            if sample.x.ncols() != model.p {
                return Err(CliError::Data(format!(
                    "dataset has {} covariates, configuration expects {}",
                    sample.x.ncols(),
                    model.p
                )));
            }
            model.n_steps = sample.n_steps();
            let p = model.p;
            let lower = DVector::from_element(p, -10.0);
            let upper = DVector::from_element(p, 10.0);
            let tilde = diffusion::qmle_h(&model, &sample, &lower, &upper)?.theta;
            let rate = 1.0 / (model.n_steps as f64).sqrt();
            match method {
                Method::Qmle => {
                    let active: Vec<bool> = tilde.iter().map(|v| *v != 0.0).collect();
                    write_estimate_csv(out, &tilde, &active)
                }
                Method::Plsa => {
                    let cfg = tuning_from_flags(gamma, r, q, rate)?;
                    let g_hat = match gmat {
                        GMat::Identity => DMatrix::identity(p, p),
                        GMat::Hessian | GMat::Moment => diffusion::g_hat_n(&model, &sample, &tilde)?,
                    };
                    let solution = solve_plsa(&tilde, g_hat, &cfg, &lower, &upper, matches!(gmat, GMat::Identity))?;
                    write_estimate_csv(out, &solution.theta_hat, &solution.active)
                }
                Method::Po => {
                    let cfg = tuning_from_flags(gamma, r, q, rate)?;
                    let loss = diffusion::DiffusionLoss::new(&model, &sample)?;
                    let result = plsa_core::po_estimate(&tilde, &cfg, &loss, &lower, &upper)?;
                    let active: Vec<bool> =
                        (0..p).map(|j| !result.selected_zero_set.contains(&j)).collect();
                    write_estimate_csv(out, &result.theta_check, &active)
                }
            }
        }
    }
}

fn solve_plsa(
    tilde: &DVector<f64>,
    g_hat: DMatrix<f64>,
    cfg: &TuningConfig,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    identity: bool,
) -> Result<plsa_core::LsaSolution, CliError> {
    let weights = plsa_core::compute_weights(tilde, cfg)?;
    let problem = plsa_core::LsaProblem::new(
        tilde.clone(),
        g_hat,
        weights,
        cfg.q,
        lower.clone(),
        upper.clone(),
    )?;
    let solution = if identity {
        plsa_core::solve_separable(&problem)?
    } else {
        plsa_core::solve_cd(&problem, &plsa_core::SolveOptions::default())?
    };
    Ok(solution)
}

fn run_harness(cfg: &McConfig, threads: Option<usize>, out: &Path) -> Result<(), CliError> {
    let run: McRun = match threads {
        None => run_mc(cfg)?,
        Some(k) => {
            if k == 0 {
                return Err(CliError::Usage("--threads must be at least 1".to_string()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| CliError::Numerical(format!("thread pool: {e}")))?;
            pool.install(|| run_mc(cfg))?
        }
    };
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Data(format!("create {}: {e}", out.display())))?;
    write_text(&out.join("summary.csv"), &render_summary_csv(&run.summary))?;
    write_text(&out.join("records.csv"), &render_records_csv(&run.records))?;
    write_text(&out.join("tables.md"), &render_tables(&run.summary))?;
    println!(
        "wrote {}, {}, {}",
        out.join("summary.csv").display(),
        out.join("records.csv").display(),
        out.join("tables.md").display()
    );
    Ok(())
}
