//! Command-line driver. Subcommands `fit`, `infer`, `design`, `verify` and
//! `oracle` read one JSON experiment config and write CSV/JSON artifacts.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config error, 3 verification failure.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_design, cmd_fit, cmd_infer, cmd_oracle, cmd_verify, fit_surrogate, posterior_csv_integral, run_estimator,
    DesignSummary, FittedSurrogate, InferMetrics, PairedRow,
};
pub use config::{
    DesignLayout, EmulatorConfig, EstimationModeConfig, EstimatorConfig, EstimatorKind, ExperimentConfig,
};

use crate::error::Error;
use crate::verify::VerifyOptions;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "surro",
    version,
    about = "GP-emulator Bayesian inference and active learning"
)]
pub struct Cli {
    /// Caps the worker thread count (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit emulators to the initial design; writes emulator.json and loo.csv.
    Fit(RunArgs),
    /// Fit and estimate the posterior; writes posterior.csv and metrics.json.
    Infer(RunArgs),
    /// Run an active-learning campaign; writes rounds.csv, snapshots and summary.json.
    Design(RunArgs),
    /// Run the Monte Carlo verification battery; writes report.json.
    Verify(VerifyArgs),
    /// Tabulate the grid reference posterior; writes oracle.csv.
    Oracle(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random instances per closed-form check.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Monte Carlo draws per comparison.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Also check that a grid posterior CSV integrates to one.
    #[arg(long)]
    pub check_posterior: Option<PathBuf>,
    /// Test hook: corrupts the log-density ECU closed form.
    #[arg(long, hide = true)]
    pub corrupt_tau: bool,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        config.set_seed(s);
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((config, out))
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => load(a).and_then(|(c, o)| {
            cmd_fit(&c, &o).map(|f| {
                println!(
                    "fit: {} design points, emulator.json and loo.csv in {}",
                    f.inputs.len(),
                    o.display()
                );
                EXIT_OK
            })
        }),
        Command::Infer(a) => load(a).and_then(|(c, o)| {
            cmd_infer(&c, &o).map(|m| {
                match m.tv_to_oracle {
                    Some(tv) => println!("infer: TV to oracle {tv:.6}; outputs in {}", o.display()),
                    None => println!("infer: outputs in {}", o.display()),
                }
                EXIT_OK
            })
        }),
        Command::Design(a) => load(a).and_then(|(c, o)| {
            cmd_design(&c, &o).map(|(_, s)| {
                println!(
                    "design: {} rounds, {} points, {} simulator calls, final TV {}",
                    s.rounds,
                    s.design_points,
                    s.total_calls,
                    s.final_tv.map_or("n/a".to_string(), |v| format!("{v:.6}"))
                );
                EXIT_OK
            })
        }),
        Command::Oracle(a) => load(a).and_then(|(c, o)| {
            cmd_oracle(&c, &o).map(|_| {
                println!("oracle: oracle.csv in {}", o.display());
                EXIT_OK
            })
        }),
        Command::Verify(a) => {
            let defaults = VerifyOptions::default();
            let opts = VerifyOptions {
                instances: a.instances.unwrap_or(defaults.instances),
                draws: a.draws.unwrap_or(defaults.draws),
                seed: a.seed.unwrap_or(defaults.seed),
                corrupt_tau: a.corrupt_tau,
                ..defaults
            };
            let out = a.out.clone().unwrap_or_else(|| PathBuf::from("out/verify"));
            cmd_verify(&opts, a.check_posterior.as_deref(), &out).map(|report| {
                for item in &report.items {
                    println!(
                        "{} {:<22} deviation {:.4} (tolerance {})",
                        if item.passed { "PASS" } else { "FAIL" },
                        item.name,
                        item.max_deviation,
                        item.tolerance
                    );
                }
                if report.passed {
                    EXIT_OK
                } else {
                    EXIT_VERIFY
                }
            })
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Parses `args` (program name first) and runs. Usage errors exit with code 2.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}
