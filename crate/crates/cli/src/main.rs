//! `spoet`: batch front end for estimation, simulation and backtesting.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spoet_core::estimate::Method;
use spoet_core::poet::FactorCount;
use spoet_core::ErrorKind;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (decomposition schema spoet.decomposition/1, manifest schema spoet.manifest/1)"
);

#[derive(Debug, Parser)]
#[command(name = "spoet", version = VERSION, about = "Structured-POET covariance estimation, simulation and backtesting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one estimator to a return panel.
    Estimate(EstimateArgs),
    /// Run a seeded Monte Carlo sweep.
    Simulate(SimulateArgs),
    /// Weekly minimum-variance backtest.
    Backtest(BacktestArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShrinkageArg {
    Soft,
    Hard,
}

#[derive(Debug, Args)]
struct PanelArgs {
    /// Panel CSV: `date,<asset ids...>`.
    #[arg(long)]
    returns: PathBuf,
    /// Membership CSV: `asset_id,continent,country,sector`.
    #[arg(long)]
    membership: PathBuf,
    /// Cells of `--returns` are prices rather than log-returns.
    #[arg(long)]
    prices: bool,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// `samcov`, `poet`, `double-poet` or `structured-poet`.
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Global factor count, `auto` or a number.
    #[arg(long, value_parser = parse_count)]
    k: Option<FactorCount>,
    /// Aggregation window in periods.
    #[arg(long)]
    d: Option<usize>,
    /// Threshold level, `auto` or a number.
    #[arg(long)]
    tau: Option<String>,
    #[arg(long, value_enum)]
    shrinkage: Option<ShrinkageArg>,
    /// Keep only within-sector idiosyncratic covariances.
    #[arg(long)]
    sector_block: bool,
    /// JSON estimator settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the dense covariance as CSV.
    #[arg(long)]
    dense: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `replications`.
    #[arg(long)]
    reps: Option<usize>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BacktestArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dump the weekly weights.
    #[arg(long)]
    weights: bool,
    #[arg(long)]
    out: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: spoet_core::Error| e.to_string())
}

fn parse_count(s: &str) -> Result<FactorCount, String> {
    s.parse().map_err(|e: spoet_core::Error| e.to_string())
}

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<spoet_core::Error> for Failure {
    fn from(e: spoet_core::Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn configure_threads() -> Result<usize, Failure> {
    if let Ok(raw) = std::env::var("SPOET_THREADS") {
        let n: usize = raw.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Failure::usage(format!(
                "SPOET_THREADS must be a positive integer, got `{raw}`"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    Ok(rayon::current_num_threads())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = configure_threads().and_then(|threads| match cli.command {
        Command::Estimate(args) => commands::estimate(args, threads),
        Command::Simulate(args) => commands::simulate(args, threads),
        Command::Backtest(args) => commands::backtest(args, threads),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_names_the_schemas() {
        assert!(VERSION.contains(spoet_core::poet::SCHEMA_VERSION));
        assert!(VERSION.contains(manifest::MANIFEST_SCHEMA));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
