//! `openchamber`: headless simulation, the chamber API server, the cloud
//! replication endpoint, and recipe/store utilities.
//!
//! Exit codes: 0 success, 1 invalid input (recipe, configuration, unknown
//! run), 2 runtime failure (I/O, network, store).

mod commands;
mod log;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "openchamber", version, about = "Simulated growth chamber: control loop, API and replication")]
struct Cli {
    /// Configuration file (TOML); falls back to $OPENCHAMBER_CONFIG.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a recipe file and report the first problem, or "ok".
    Validate {
        file: PathBuf,
    },
    /// Run a recipe headless and write its telemetry as CSV.
    Simulate(SimulateArgs),
    /// Run the control loop against the simulated chamber and serve the API.
    Serve(ServeArgs),
    /// Replicate the local store with a cloud endpoint once.
    Sync(SyncArgs),
    /// Run the cloud replication endpoint.
    Cloud(CloudArgs),
    /// Write one run's telemetry from the store as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_name = "FILE")]
    pub recipe: PathBuf,
    /// Chamber preset; overrides the configuration file.
    #[arg(long)]
    pub preset: Option<String>,
    /// Simulated hours; defaults to the whole recipe.
    #[arg(long)]
    pub hours: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV; `-` for stdout.
    #[arg(long, value_name = "FILE", default_value = "-")]
    pub out: PathBuf,
    /// `max`, or simulated seconds per wall second.
    #[arg(long, default_value = "max", value_parser = parse_speed)]
    pub speed: Speed,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub bind: Option<String>,
    /// `max`, or simulated seconds per wall second; overrides the configuration file.
    #[arg(long, value_parser = parse_speed)]
    pub speed: Option<Speed>,
    /// Store file; overrides `store.path`.
    #[arg(long, value_name = "FILE")]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SyncArgs {
    /// Base URL of the cloud endpoint; overrides `sync.server`.
    #[arg(long)]
    pub server: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub store: Option<PathBuf>,
    /// This chamber's peer id; overrides `sync.peer_id`.
    #[arg(long)]
    pub peer: Option<String>,
    /// Kinds to pull, comma separated, or `all`; overrides `sync.pull_filter`.
    #[arg(long)]
    pub filter: Option<String>,
    /// Bearer token; overrides `token`.
    #[arg(long, env = "OPENCHAMBER_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

#[derive(Debug, Args)]
pub struct CloudArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: String,
    #[arg(long, value_name = "FILE", default_value = "-")]
    pub out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub store: Option<PathBuf>,
    /// `measured` or `desired`; both by default.
    #[arg(long)]
    pub stream: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Speed {
    Max,
    Factor(f64),
}

fn parse_speed(s: &str) -> Result<Speed, String> {
    if s == "max" {
        return Ok(Speed::Max);
    }
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(Speed::Factor(x)),
        _ => Err(format!("`{s}` is neither `max` nor a positive number")),
    }
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

pub type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Validate { file } => commands::validate(&file),
        Command::Simulate(args) => commands::simulate(config, args),
        Command::Serve(args) => commands::serve(config, args),
        Command::Sync(args) => commands::sync(config, args),
        Command::Cloud(args) => commands::cloud(config, args),
        Command::Export(args) => commands::export(config, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            let (Failure::Invalid(e) | Failure::Runtime(e)) = f;
            log::emit("error", &format!("{e:#}"), json!({ "exit_code": code }));
            ExitCode::from(code)
        }
    }
}
