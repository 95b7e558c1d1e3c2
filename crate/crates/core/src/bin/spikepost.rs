use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spikepost::harness::{run_experiment, summary_text, ExperimentConfig, ExperimentKind};
use spikepost::Result;

/// Bayesian estimation of sparse principal subspaces in spiked covariance
/// models.
#[derive(Parser)]
#[command(name = "spikepost", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a data set from a random sparse spiked model.
    Generate(Common),
    /// Posterior mean estimate for a data set.
    Estimate(Common),
    /// Compare the polynomial method against exhaustive enumeration.
    OracleParity(Common),
    /// Monte Carlo check of the prior's sparsity tail bound.
    PriorProbe(Common),
    /// Monte Carlo check of the Gaussian eigengap bound.
    EigengapProbe(Common),
    /// Random sin-theta inequality checks.
    SinthetaSweep(Common),
    /// Loss against sample size for the posterior mean.
    Contraction(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; the summary goes next to it with a .json extension.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::Generate(c) => (ExperimentKind::Generate, c),
            Command::Estimate(c) => (ExperimentKind::Estimate, c),
            Command::OracleParity(c) => (ExperimentKind::OracleParity, c),
            Command::PriorProbe(c) => (ExperimentKind::PriorProbe, c),
            Command::EigengapProbe(c) => (ExperimentKind::EigengapProbe, c),
            Command::SinthetaSweep(c) => (ExperimentKind::SinthetaSweep, c),
            Command::Contraction(c) => (ExperimentKind::Contraction, c),
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let (kind, common) = cli.command.split();
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    config.kind = Some(kind);
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    if common.out.is_some() {
        config.out = common.out;
    }
    if let Some(t) = common.threads {
        config.threads = t;
    }
    let output = run_experiment(&config)?;
    if let Some(warnings) = output.summary.get("warnings").and_then(|w| w.as_array()) {
        for w in warnings {
            eprintln!("warning: {}", w.as_str().unwrap_or_default());
        }
    }
    match &config.out {
        Some(path) => {
            output.write(path)?;
        }
        None => {
            std::io::stdout().write_all(output.csv.as_bytes())?;
            eprint!("{}", summary_text(&output.summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
