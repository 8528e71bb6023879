//! `bayesbt`: rank entities from indicator tables with a Bayesian
//! Bradley-Terry model.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use bayesbt::win_matrix::TiePolicy;
use bayesbt::{Error, ErrorKind};
use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "bayesbt", version, about = "Bayesian Bradley-Terry ranking from indicator tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the posterior and write rankings and diagnostics.
    Fit(RunArgs),
    /// Classical maximum-likelihood ranking.
    Mle(RunArgs),
    /// Recompute diagnostics from a saved chain.
    Diagnose {
        /// Chain file written by `fit`.
        chain: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Lag-window bandwidth (default: cube root of the draw count).
        #[arg(long)]
        bandwidth: Option<usize>,
        /// Output directory (default: the chain's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a synthetic recovery study.
    Simulate {
        /// TOML study specification.
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated income zones: low, middle, high.
    #[arg(long, value_delimiter = ',')]
    zones: Option<Vec<String>>,
    #[arg(long, value_parser = parse_tie_policy)]
    tie_policy: Option<TiePolicy>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    indicators: Option<PathBuf>,
    #[arg(long)]
    polarity: Option<PathBuf>,
    #[arg(long)]
    income: Option<PathBuf>,
}

fn parse_tie_policy(s: &str) -> Result<TiePolicy, String> {
    s.parse()
}

impl RunArgs {
    fn load(&self) -> bayesbt::Result<RunConfig> {
        RunConfig::load(
            self.config.as_deref(),
            &Overrides {
                seed: self.seed,
                iterations: self.iterations,
                beta: self.beta,
                zones: self.zones.clone(),
                tie_policy: self.tie_policy,
                out: self.out.clone(),
                indicators: self.indicators.clone(),
                polarity: self.polarity.clone(),
                income: self.income.clone(),
                bandwidth: None,
            },
        )
    }
}

fn run(cli: Cli) -> bayesbt::Result<()> {
    match cli.command {
        Command::Fit(args) => commands::cmd_fit(&args.load()?),
        Command::Mle(args) => commands::cmd_mle(&args.load()?),
        Command::Diagnose {
            chain,
            config,
            bandwidth,
            out,
        } => {
            let cfg = RunConfig::load(
                config.as_deref(),
                &Overrides {
                    bandwidth,
                    ..Default::default()
                },
            )?;
            cfg.validate()?;
            commands::cmd_diagnose(&chain, &cfg, out.as_ref())
        }
        Command::Simulate { spec, seed, out } => commands::cmd_simulate(&spec, seed, &out),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Validation => 1,
        ErrorKind::Numeric => 2,
        ErrorKind::Io => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
