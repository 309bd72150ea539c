//! `qlink`: config-driven runs, sweeps and checks for the quantum link model.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};

use commands::{FitKind, Outcome};
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "qlink", version, about = "Floquet-protected quantum link model runs")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `run.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parallel runs in a sweep.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Accepted for compatibility; every run is deterministic.
    #[arg(long, global = true)]
    seedless: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve one configuration and write its time series.
    Run,
    /// Repeat a run over the values in `[sweep]` and tabulate lifetimes.
    Sweep,
    /// Compare effective lattice dynamics with the kink/defect model.
    QmmCompare,
    /// Truncation error of the effective Hamiltonian over a ladder of step sizes.
    MagnusCheck {
        /// Step sizes `T`.
        #[arg(long, value_delimiter = ',', default_values_t = [0.04, 0.02, 0.01, 0.005, 0.0025])]
        steps: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        max_order: usize,
    },
    /// Spectrum of decoupled hopping segments and its degeneracies.
    Spectrum {
        /// Segment lengths, e.g. `3,5`.
        #[arg(long, value_delimiter = ',', required = true)]
        segments: Vec<usize>,
        #[arg(long = "J", default_value_t = 1.0)]
        j: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Power-law or lifetime fit of one CSV column.
    Fit {
        /// Time series CSV.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        column: String,
        /// Closed time window `a,b`.
        #[arg(long, value_delimiter = ',')]
        window: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = FitKind::Power)]
        kind: FitKind,
        /// Absolute lifetime threshold; default is `e^-0.4` of the first sample.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn load(cli: &Cli) -> Result<(RunConfig, PathBuf)> {
    let path = cli.config.as_ref().ok_or_else(|| anyhow!("--config is required for this subcommand"))?;
    let cfg = RunConfig::load(path)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.run.out));
    Ok((cfg, out))
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Run => {
            let (cfg, out) = load(cli)?;
            commands::cmd_run(&cfg, &out)
        }
        Command::Sweep => {
            let (cfg, out) = load(cli)?;
            commands::cmd_sweep(&cfg, &out, cli.workers)
        }
        Command::QmmCompare => {
            let (cfg, out) = load(cli)?;
            commands::cmd_qmm_compare(&cfg, &out)
        }
        Command::MagnusCheck { steps, max_order } => {
            let (cfg, out) = load(cli)?;
            commands::cmd_magnus_check(&cfg, &out, steps, *max_order)
        }
        Command::Spectrum { segments, j, tol } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            commands::cmd_spectrum(segments, *j, *tol, &out)
        }
        Command::Fit { input, column, window, kind, threshold } => {
            let window = match window.as_deref() {
                None => None,
                Some(&[a, b]) => Some((a, b)),
                Some(_) => return Err(anyhow!("--window takes two values a,b")),
            };
            commands::cmd_fit(input, column, window, *kind, *threshold, cli.out.as_ref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => {
            eprintln!("error: some sweep runs failed; see sweep.json");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
