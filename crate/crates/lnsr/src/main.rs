use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lnsr::config::ExperimentConfig;
use lnsr::experiments::{run_command, Command};
use lnsr::Result;

/// Layer-wise noise stability regularization experiments.
#[derive(Parser)]
#[command(name = "lnsr", version)]
struct Cli {
    /// Sectioned key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training and sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV output.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Train one model and write per-epoch metrics, a summary and a checkpoint.
    Train,
    /// Multi-seed statistics across injection layers or mix ratios.
    Sweep,
    /// Monte-Carlo check of the second-order expansion of the stability term.
    VerifyClaim1,
    /// Monte-Carlo estimates of the Jacobian-Hessian cross term.
    CrossTerm,
    /// Relative activation deviation per layer after noise injection.
    NoiseCurve,
    /// Normalized covariance spectra of standard and in-manifold noise.
    PcaSpectrum,
    /// Timing of noise generation and neighbor search.
    Bench,
    /// Generalization gap and dev-metric spread over seeds for each mode.
    GapReport,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Train => Command::Train,
            Cmd::Sweep => Command::Sweep,
            Cmd::VerifyClaim1 => Command::VerifyClaim1,
            Cmd::CrossTerm => Command::CrossTerm,
            Cmd::NoiseCurve => Command::NoiseCurve,
            Cmd::PcaSpectrum => Command::PcaSpectrum,
            Cmd::Bench => Command::Bench,
            Cmd::GapReport => Command::GapReport,
        }
    }
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    run_command(cli.command.into(), &cfg, &cli.out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
