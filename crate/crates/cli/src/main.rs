mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{CliError, CliResult};

/// Heterogeneous Deffuant-Weisbuch opinion dynamics toolkit.
///
/// Exit codes: 0 success, 2 bad arguments or config, 3 I/O failure,
/// 4 precondition not met, 5 weighting factor outside [1/2, 1),
/// 6 verification failed. Errors are printed to stderr as one JSON line.
#[derive(Parser)]
#[command(name = "hdw", version)]
struct Cli {
    /// TOML or JSON file with default values for the subcommand's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for ensembles (default: all cores). Does not change results.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one seeded run and write the trace.
    Simulate(commands::SimulateArgs),
    /// Print the maximal-confidence clusters of a state.
    Partition(commands::PartitionArgs),
    /// Synthesize a control sequence (split-or-shrink or complete-all).
    Synthesize(commands::SynthesizeArgs),
    /// Replay a control sequence and check its claimed outcome.
    Replay(commands::ReplayArgs),
    /// Evaluate the convergence-rate bound, optionally against simulations.
    Bound(commands::BoundArgs),
    /// Estimate consensus probability over a grid of largest bounds.
    Sweep(commands::SweepArgs),
    /// Exact expectations by enumerating every pair sequence.
    Oracle(commands::OracleArgs),
    /// Check trace and control-sequence artifacts.
    Verify(commands::VerifyArgs),
}

fn run() -> CliResult<()> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = err.print();
                return Ok(());
            }
            let text = err.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::config(first.trim_start_matches("error: ").to_string()));
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let config = cli.config.as_deref().map(config::load).transpose()?;
    let config = config.as_ref();
    match cli.command {
        Command::Simulate(a) => commands::simulate(config::merge(a, config, "simulate")?),
        Command::Partition(a) => commands::partition(config::merge(a, config, "partition")?),
        Command::Synthesize(a) => commands::synthesize(config::merge(a, config, "synthesize")?),
        Command::Replay(a) => commands::replay(config::merge(a, config, "replay")?),
        Command::Bound(a) => commands::bound(config::merge(a, config, "bound")?),
        Command::Sweep(a) => commands::sweep(config::merge(a, config, "sweep")?),
        Command::Oracle(a) => commands::oracle(config::merge(a, config, "oracle")?),
        Command::Verify(a) => commands::verify(config::merge(a, config, "verify")?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_line());
            ExitCode::from(err.kind.code() as u8)
        }
    }
}
