//! `causal-pm`: deterministic experiment harness.
//!
//! Exit codes: 0 success, 1 I/O, 2 config, 3 solver, 4 model violation.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::commands::RunContext;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{write_metadata, Metadata};

#[derive(Parser)]
#[command(name = "causal-pm", version, about = "Causal posterior matching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Error exponent and stabilizable gain over (p, n) grids.
    ExponentSweep(RunArgs),
    /// Analytic, capacity and empirical gain bounds against p.
    AlphaVsP(RunArgs),
    /// Monte Carlo prefix-error probabilities.
    ErrorProb(RunArgs),
    /// Closed-loop stability over (alpha, p, n) grids or the empirical frontier.
    ControlSim(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `trials` in the config.
    #[arg(long)]
    trials: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

fn run(cli: Cli) -> Result<()> {
    let (name, args) = match &cli.command {
        Command::ExponentSweep(a) => ("exponent-sweep", a),
        Command::AlphaVsP(a) => ("alpha-vs-p", a),
        Command::ErrorProb(a) => ("error-prob", a),
        Command::ControlSim(a) => ("control-sim", a),
    };
    let mut config = ExperimentConfig::load(&args.config)?;
    config.check_experiment(name)?;
    config.seed = args.seed.or(config.seed);
    config.trials = args.trials.or(config.trials);
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    std::fs::create_dir_all(&args.out).map_err(CliError::io(&args.out))?;

    let start = Instant::now();
    let config_hash = config.hash();
    let ctx = RunContext {
        out_dir: &args.out,
        config_hash: &config_hash,
    };
    let outputs = match &cli.command {
        Command::ExponentSweep(_) => commands::exponent_sweep_cmd(&config, &ctx)?,
        Command::AlphaVsP(_) => commands::alpha_vs_p_cmd(&config, &ctx)?,
        Command::ErrorProb(_) => commands::error_prob_cmd(&config, &ctx)?,
        Command::ControlSim(_) => commands::control_sim_cmd(&config, &ctx)?,
    };
    let meta = Metadata {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: config_hash.clone(),
        seeds: format!("master:{}/trials:{}", config.seed(), config.trials.unwrap_or(0)),
        config: &config,
        workers: rayon::current_num_threads(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
        outputs,
    };
    write_metadata(&args.out.join(format!("{name}.json")), &meta)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("causal-pm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
