use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssdrl::harness::{run_experiment, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "ssdrl", version, about = "Distributional RL experiments with Wasserstein gradient flows and SSD action selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Moment regression on the Gaussian mixture, WGF against QR.
    Regress(RunArgs),
    /// Minimum temperature by step size grid for the WGF regression.
    Ablate(RunArgs),
    /// Start-state policy evaluation on the standard cliff walk.
    Evaluate(RunArgs),
    /// Control with the WGF and QR learners.
    Control(RunArgs),
    /// Control with the SSD, epsilon-greedy and CVaR behavior policies.
    ComparePolicies(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory; overrides SSDRL_OUT and the config.
    #[arg(long, env = "SSDRL_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (0 uses every core).
    #[arg(long)]
    threads: Option<usize>,
}

fn run(kind: ExperimentKind, args: RunArgs) -> ssdrl::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(kind, path)?,
        None => ExperimentConfig::defaults(kind)?,
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(out) = args.out {
        cfg.out = out;
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    let output = run_experiment(&cfg)?;
    println!(
        "{}: {} trials on {}, {} files in {}",
        kind.name(),
        cfg.trials,
        cfg.env_name,
        output.files.len(),
        cfg.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Regress(a) => (ExperimentKind::Regress, a),
        Command::Ablate(a) => (ExperimentKind::Ablate, a),
        Command::Evaluate(a) => (ExperimentKind::Evaluate, a),
        Command::Control(a) => (ExperimentKind::Control, a),
        Command::ComparePolicies(a) => (ExperimentKind::ComparePolicies, a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
