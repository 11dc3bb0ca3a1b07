//! Command-line experiment runner.

use clap::{Args, Parser, Subcommand};
use mdlod::harness::{fit_rates, write_csv, ExperimentConfig, RateMode, ReportRow, Session};
use mdlod::{build_domain, GeometrySpec};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mdlod", version, about = "Multiscale solver for mixed-dimensional elliptic problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunOpts {
    /// Experiment config file (TOML).
    config: PathBuf,
    /// Worker threads for local solves (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output CSV path (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed override for random coefficients.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a geometry spec file and report violations.
    Validate {
        /// Geometry spec file (TOML).
        geometry: PathBuf,
    },
    /// Run the first (H, ell) cell of a config and report the energy error.
    Solve {
        #[command(flatten)]
        opts: RunOpts,
        /// Write the multiscale solution as x,y,segment,value CSV.
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Run the full H grid and print experimental orders of convergence.
    Convergence {
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run the oversampling sweep at fixed H and print the decay slope.
    Decay {
        #[command(flatten)]
        opts: RunOpts,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(opts: &RunOpts) -> Result<ExperimentConfig, Box<dyn std::error::Error + Send + Sync>> {
    let mut cfg = ExperimentConfig::from_path(&opts.config)?;
    if let Some(out) = &opts.out {
        cfg.output = out.clone();
    }
    if opts.threads > 0 {
        cfg.threads = opts.threads;
    }
    Ok(cfg)
}

fn with_pool<T>(
    threads: usize,
    f: impl FnOnce() -> Result<T, Box<dyn std::error::Error + Send + Sync>> + Send,
) -> Result<T, Box<dyn std::error::Error + Send + Sync>>
where
    T: Send,
{
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(f)
}

fn print_rows(rows: &[ReportRow]) {
    println!("{}", mdlod::harness::CSV_HEADER);
    for r in rows {
        println!("{}", r.csv_line());
    }
}

fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error + Send + Sync>> {
    match cli.command {
        Command::Validate { geometry } => {
            let spec = GeometrySpec::from_path(&geometry)?;
            let domain = build_domain(&spec)?;
            let violations = domain.validate();
            println!(
                "geometry: {} bulk segment(s), {} interface segment(s), {} junction(s)",
                domain.n_bulk,
                domain.interfaces.len(),
                domain.junctions.len()
            );
            if violations.is_empty() {
                println!("valid: no violations");
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &violations {
                    eprintln!("violation: {v}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Solve { opts, solution } => {
            let cfg = load_config(&opts)?;
            let threads = cfg.threads;
            with_pool(threads, move || {
                let n_coarse = *cfg.coarse.iter().min().ok_or("empty coarse grid")?;
                let ell = cfg.ell.first().copied().unwrap_or(1);
                let output = cfg.output.clone();
                let session = Session::prepare(cfg, opts.seed)?;
                let (row, u, report) = session.run_cell(n_coarse, ell)?;
                if let Some(r) = report {
                    println!(
                        "regularity: {} (rho0 = {}, rho1 = {})",
                        if r.all_ok() { "ok" } else { "VIOLATED" },
                        r.rho0,
                        r.rho1
                    );
                }
                write_csv(std::slice::from_ref(&row), &output)?;
                print_rows(std::slice::from_ref(&row));
                if let Some(path) = solution {
                    session.dofs.write_solution_csv(&session.mesh, &u, &path)?;
                    println!("solution written to {}", path.display());
                }
                Ok(ExitCode::SUCCESS)
            })
        }
        Command::Convergence { opts } => {
            let cfg = load_config(&opts)?;
            let threads = cfg.threads;
            with_pool(threads, move || {
                let out = mdlod::harness::run_experiment(cfg, opts.seed)?;
                print_rows(&out.rows);
                // One EOC table per oversampling value.
                let mut ells: Vec<usize> = out.rows.iter().map(|r| r.ell).collect();
                ells.sort_unstable();
                ells.dedup();
                for ell in ells {
                    let series: Vec<ReportRow> =
                        out.rows.iter().filter(|r| r.ell == ell).cloned().collect();
                    if series.len() >= 2 {
                        let fit = fit_rates(&series, RateMode::HRate)?;
                        println!(
                            "ell = {ell}: EOC per step {:?}, least-squares order {:.3}",
                            fit.per_step.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                            fit.slope
                        );
                    }
                }
                Ok(ExitCode::SUCCESS)
            })
        }
        Command::Decay { opts } => {
            let cfg = load_config(&opts)?;
            let threads = cfg.threads;
            with_pool(threads, move || {
                let cfg = ExperimentConfig {
                    coarse: vec![*cfg.coarse.iter().min().ok_or("empty coarse grid")?],
                    ..cfg
                };
                let out = mdlod::harness::run_experiment(cfg, opts.seed)?;
                print_rows(&out.rows);
                for r in &out.reports {
                    println!(
                        "regularity: {} (rho0 = {}, rho1 = {})",
                        if r.all_ok() { "ok" } else { "VIOLATED" },
                        r.rho0,
                        r.rho1
                    );
                }
                if out.rows.len() >= 2 {
                    let fit = fit_rates(&out.rows, RateMode::EllDecay)?;
                    println!("decay slope per layer: {:.3}", fit.slope);
                }
                Ok(ExitCode::SUCCESS)
            })
        }
    }
}
