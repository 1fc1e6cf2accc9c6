//! `cqed` — run and check the cavity-homodyne simulator from a TOML
//! configuration.
//!
//! Exit codes: 0 success, 1 check failure, 2 config error, 3 numeric or
//! truncation error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cqed_homodyne::error::SimError;
use cqed_homodyne::io::{self, OutputFormat, RunConfig};

mod commands;
mod observables;
mod report;

#[derive(Parser)]
#[command(name = "cqed", about = "Driven atom-cavity homodyne simulator", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "cqed.toml")]
    config: PathBuf,

    /// Output directory (overrides [output].dir).
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// RNG seed override for sample/sme runs.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output format override: csv or json.
    #[arg(long, global = true)]
    format: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analytic-identity check battery and write a report.
    Verify,
    /// Integrate the unconditional master equation and write the series.
    Evolve,
    /// Sample photocount-record trajectories.
    Sample,
    /// Conditional state for a given photocount record.
    Conditional,
    /// Diffusive-limit stochastic master equation run.
    Sme,
}

pub struct Ctx {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    pub seed_override: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                SimError::Config(_) => 2,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode, SimError> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| SimError::Config(format!("read {}: {e}", cli.config.display())))?;
    let config = io::parse_config(&text)?;
    let out_dir = cli
        .output
        .clone()
        .or_else(|| config.output.as_ref().map(|o| PathBuf::from(&o.dir)))
        .unwrap_or_else(|| PathBuf::from("out"));
    let format = match cli.format.as_deref() {
        Some("csv") => OutputFormat::Csv,
        Some("json") => OutputFormat::Json,
        Some(other) => {
            return Err(SimError::Config(format!(
                "unknown format {other}; expected csv or json"
            )))
        }
        None => config
            .output
            .as_ref()
            .map(|o| o.format.clone())
            .unwrap_or(OutputFormat::Csv),
    };
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| SimError::Config(format!("create {}: {e}", out_dir.display())))?;
    let ctx = Ctx {
        config,
        out_dir,
        format,
        seed_override: cli.seed,
    };
    match cli.command {
        Command::Verify => commands::cmd_verify(&ctx),
        Command::Evolve => commands::cmd_evolve(&ctx),
        Command::Sample => commands::cmd_sample(&ctx),
        Command::Conditional => commands::cmd_conditional(&ctx),
        Command::Sme => commands::cmd_sme(&ctx),
    }
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), SimError> {
    let path = dir.join(name);
    std::fs::write(&path, text)
        .map_err(|e| SimError::Config(format!("write {}: {e}", path.display())))
}
