//! `sweepctl`: simulate, solve, certify and check sweeping-process control problems.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input files (exit 2).
    Config(String),
    /// Numerical failure (exit 3).
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "sweepctl", version, about = "Optimal control of sweeping processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the catch-up scheme and, with `gamma`, the penalty system.
    Simulate(Common),
    /// Transcribe and solve the discrete program.
    Solve(Common),
    /// Extract and verify optimality certificates from a previous solve.
    Certify(Common),
    /// Penalty-to-catch-up convergence table.
    Converge(Common),
    /// Sample the standing assumptions and check analytic derivatives.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let (common, cmd): (&Common, fn(&RunConfig, &std::path::Path) -> commands::Outcome) = match &cli.command {
        Command::Simulate(c) => (c, commands::simulate),
        Command::Solve(c) => (c, commands::solve),
        Command::Certify(c) => (c, commands::certify),
        Command::Converge(c) => (c, commands::converge),
        Command::Check(c) => (c, commands::check),
    };
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = cfg.out_dir(common.out.as_deref());
    cmd(&cfg, &out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
