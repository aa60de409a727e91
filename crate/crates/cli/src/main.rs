mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use paydist_core::fitting::{FitModel, Metric};

use crate::commands::RunArgs;
use crate::error::CliError;

/// Equilibria, dynamics and tail fits for the pay-distribution game.
///
/// Exit codes: 0 ok, 1 I/O, 2 invalid config or input, 3 no convergence,
/// 4 insufficient data for a fit.
#[derive(Parser)]
#[command(name = "paydist", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunOpts {
    /// Scenario config (JSON), or a manifest from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl From<RunOpts> for RunArgs {
    fn from(o: RunOpts) -> Self {
        RunArgs {
            config: o.config,
            seed: o.seed,
            out: o.out,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Analytic equilibrium densities and parameters.
    Solve(RunOpts),
    /// Agent simulation or mean-field integration, per the config's mode.
    Simulate(RunOpts),
    /// Fits a histogram CSV; prints the result and writes it next to the input.
    Fit {
        histogram: PathBuf,
        #[arg(long, value_enum, default_value_t = FitMode::Powerlaw)]
        mode: FitMode,
        #[arg(long, default_value_t = 0.03)]
        top_fraction: f64,
    },
    /// Distance between the densities of two histogram CSVs.
    Compare {
        first: PathBuf,
        second: PathBuf,
        #[arg(long, value_enum, default_value_t = MetricArg::L1)]
        metric: MetricArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMode {
    Lognormal,
    Powerlaw,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    L1,
    Linf,
    Ks,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(o) => commands::solve(&o.into()),
        Command::Simulate(o) => commands::simulate(&o.into()),
        Command::Fit {
            histogram,
            mode,
            top_fraction,
        } => {
            let mode = match mode {
                FitMode::Lognormal => FitModel::Lognormal,
                FitMode::Powerlaw => FitModel::Powerlaw,
            };
            print!("{}", commands::fit(&histogram, mode, top_fraction)?);
            Ok(())
        }
        Command::Compare {
            first,
            second,
            metric,
        } => {
            let metric = match metric {
                MetricArg::L1 => Metric::L1,
                MetricArg::Linf => Metric::Linf,
                MetricArg::Ks => Metric::Ks,
            };
            println!("{}", output::num(commands::compare(&first, &second, metric)?));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("paydist: {e}");
            e.exit_code()
        }
    }
}
