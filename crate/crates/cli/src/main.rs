//! `lieflow`: run hierarchy flows, solitons, development maps and the
//! acceptance checks from a flat configuration file.
//!
//! Exit codes: 0 success, 2 configuration or I/O error, 3 numerical failure,
//! 4 verification failure.

mod commands;
mod config;
mod output;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lieflow::LieError;
use serde_json::json;

use config::RunConfig;
use output::OutDir;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numerical(String),
}

impl From<LieError> for CliError {
    fn from(e: LieError) -> Self {
        match e {
            LieError::TagMismatch(_) | LieError::Unsupported(_) | LieError::Shape(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "lieflow", version, about = "Soliton hierarchies, development maps and curve flows")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `KEY=VALUE`, applied after the file; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the (b, j)-flow of a potential, or the curve flow with `flow.curve = true`.
    Flow,
    /// Evaluate a dressed vacuum solution.
    Soliton,
    /// Round-trip, undevelop or develop a potential or curve.
    Develop,
    /// Solve the finite type system.
    FiniteType,
    /// Run acceptance criteria; SUITE is `all` or comma-separated keys or numbers.
    Verify { suite: Option<String> },
    /// Print the resolved configuration.
    Config,
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    if let Command::Config = cli.command {
        print!("# config_hash={}\n{}", cfg.hash(), cfg.canonical());
        return Ok(true);
    }
    let mut out = OutDir::create(&cli.out, &cfg.hash())?;
    let (name, outcome) = match &cli.command {
        Command::Flow => ("flow", commands::flow(&cfg, &mut out)?),
        Command::Soliton => ("soliton", commands::soliton(&cfg, &mut out)?),
        Command::Develop => ("develop", commands::develop_cmd(&cfg, &mut out)?),
        Command::FiniteType => ("finite-type", commands::finite_type(&cfg, &mut out)?),
        Command::Verify { suite } => ("verify", commands::verify_cmd(&cfg, suite.as_deref(), &mut out)?),
        Command::Config => unreachable!(),
    };
    let mut files = out.files().to_vec();
    files.push("report.json".into());
    let report = json!({
        "command": name,
        "config_hash": cfg.hash(),
        "config": cfg.to_json(),
        "passed": outcome.passed,
        "summary": outcome.summary,
        "files": files,
    });
    out.json("report.json", &report)?;
    if name != "verify" {
        println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap_or_default());
    }
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("lieflow: {e}");
            ExitCode::from(e.code())
        }
    }
}
