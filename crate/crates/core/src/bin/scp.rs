//! `scp` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scp_core::experiments::{run, ExperimentConfig, ExperimentKind};
use scp_core::ScpError;

#[derive(Parser)]
#[command(name = "scp", version, about = "Data-consistent stochastic inversion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the parameter distribution and write heatmap, pushforward and sample CSVs.
    Solve(RunArgs),
    /// Compare solutions for pairs of trial-generating distributions.
    Stability(RunArgs),
    /// Track convergence of solutions along a sequence with a density limit.
    LocalLimit(RunArgs),
    /// Track test-function integrals along a sequence with an atomic or mixed limit.
    Weak(RunArgs),
    /// Report on map, domain and prior assumptions without solving.
    Audit(RunArgs),
    /// Concrete-strength power-law calibration from a CSV dataset.
    Concrete(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed; replaces all seeds in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed replicates for noise-floor estimates.
    #[arg(long)]
    replicates: Option<usize>,
}

fn execute(kind: ExperimentKind, args: &RunArgs) -> Result<(), ScpError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    let outcome = run(&cfg, kind, &args.out).map_err(|e| match e {
        ScpError::Config(m) => ScpError::Config(format!("{}: {m}", args.config.display())),
        other => other,
    })?;
    println!("{}", serde_json::to_string_pretty(&outcome.diagnostics)?);
    eprintln!("wrote {} files to {}", outcome.files.len() + 1, outcome.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Solve(a) => (ExperimentKind::Solve, a),
        Command::Stability(a) => (ExperimentKind::Stability, a),
        Command::LocalLimit(a) => (ExperimentKind::LocalLimit, a),
        Command::Weak(a) => (ExperimentKind::Weak, a),
        Command::Audit(a) => (ExperimentKind::Audit, a),
        Command::Concrete(a) => (ExperimentKind::Concrete, a),
    };
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", args.config.display());
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
