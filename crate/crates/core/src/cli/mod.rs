//! Command-line harness: `validate | solve | value | simulate | verify`.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{run, Report};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid model:\n{0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0} verification check(s) failed")]
    Verification(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Parse(_) | CliError::Invalid(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "levy-switching", version, about = "Regime-switching Lévy markets: minimal martingale measures, optimal HARA strategies and their verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Check the scenario file and the model it describes.
    Validate(CommonArgs),
    /// Girsanov parameters and divergence rates per regime.
    Solve(CommonArgs),
    /// Theoretical and Monte Carlo expected utilities, with dominance checks.
    Value(CommonArgs),
    /// Simulate paths and dump terminal values and traces.
    Simulate(SimulateArgs),
    /// Run the verification suite.
    Verify(VerifyArgs),
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Validate(c) | Command::Solve(c) | Command::Value(c) => c,
            Command::Simulate(s) => &s.common,
            Command::Verify(v) => &v.common,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides simulation.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides simulation.paths.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Overrides output.directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of leading paths written in full to trace.csv.
    #[arg(long, default_value_t = 1)]
    pub trace_paths: usize,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Replace the solved β of regime j (one-based), e.g. `2=0.1` or `1=0.1,-0.3`.
    #[arg(long = "override-beta", value_parser = parse_override)]
    pub override_beta: Vec<(usize, Vec<f64>)>,
}

fn parse_override(s: &str) -> Result<(usize, Vec<f64>), String> {
    let (j, v) = s.split_once('=').ok_or_else(|| format!("expected j=v, got `{s}`"))?;
    let j: usize = j.trim().parse().map_err(|_| format!("bad regime index `{j}`"))?;
    if j == 0 {
        return Err("regime indices are one-based".into());
    }
    let v = v
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad number `{x}`")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((j, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_parsing() {
        assert_eq!(parse_override("2=0.1").unwrap(), (2, vec![0.1]));
        assert_eq!(parse_override("1=0.1,-0.3").unwrap(), (1, vec![0.1, -0.3]));
        assert!(parse_override("0=1").is_err());
        assert!(parse_override("1").is_err());
        assert!(parse_override("1=x").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Parse(String::new()).exit_code(), 2);
        assert_eq!(CliError::Invalid(String::new()).exit_code(), 2);
        assert_eq!(CliError::Numerical(String::new()).exit_code(), 3);
        assert_eq!(CliError::Verification(1).exit_code(), 4);
        assert_eq!(CliError::Io(String::new()).exit_code(), 1);
    }

    #[test]
    fn argument_parsing() {
        let cli = Cli::try_parse_from(["levy-switching", "verify", "--config", "a.toml", "--override-beta", "1=0.5", "--paths", "10"]).unwrap();
        match cli.command {
            Command::Verify(v) => {
                assert_eq!(v.override_beta, vec![(1, vec![0.5])]);
                assert_eq!(v.common.paths, Some(10));
            }
            _ => panic!(),
        }
        assert!(Cli::try_parse_from(["levy-switching", "solve"]).is_err());
    }
}
