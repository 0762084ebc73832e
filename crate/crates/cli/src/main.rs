use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

mod commands;
mod files;
mod model;

/// Data-free weight quantization: grids, RHT quantization, linear error
/// model calibration and exact per-layer bitwidth allocation.
#[derive(Debug, Parser)]
#[command(name = "higgs", version)]
struct Cli {
    /// Run seed; every other seed is derived from it.
    #[arg(long, global = true, env = "HIGGS_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print one JSON object instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grid construction.
    #[command(subcommand)]
    Grid(GridCommand),
    /// Encode a tensor file to HQTZ.
    Quantize(commands::QuantizeArgs),
    /// Decode an HQTZ file back to a tensor file.
    Dequantize(commands::DequantizeArgs),
    /// Quantization menus for the allocator.
    #[command(subcommand)]
    Menu(MenuCommand),
    /// Fit per-layer alphas by Gaussian noise insertion.
    Calibrate(commands::CalibrateArgs),
    /// Solve the bitwidth allocation for one or more budgets.
    Allocate(commands::AllocateArgs),
    /// Measured-vs-predicted loss sweep.
    Linearity(commands::LinearityArgs),
}

#[derive(Debug, Subcommand)]
enum GridCommand {
    /// Build a grid and write it as HGRD.
    Build(commands::GridBuildArgs),
}

#[derive(Debug, Subcommand)]
enum MenuCommand {
    /// Measure t² and exact cost of every option on every layer.
    Build(commands::MenuBuildArgs),
}

/// Settings shared by every command.
#[derive(Debug, Clone, Copy)]
pub struct Common {
    pub seed: u64,
    pub json: bool,
}

#[derive(Debug)]
pub enum CliError {
    Lib(higgs::Error),
    Usage(String),
    Io(String),
    Corrupt(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        use higgs::{Error, FormatError};
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Corrupt(_) => 4,
            CliError::Lib(e) => match e {
                Error::InvalidArgument(_) | Error::Corrupt(FormatError::GridMismatch { .. }) => 2,
                Error::Io(_) => 3,
                Error::Corrupt(_) | Error::Serde(_) => 4,
                Error::Infeasible { .. } => 5,
                Error::Numeric(_) | Error::TooLarge(_) | Error::NoConvergence(_) => 1,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Lib(e) => e.to_string(),
            CliError::Usage(m) => format!("invalid argument: {m}"),
            CliError::Io(m) => format!("i/o error: {m}"),
            CliError::Corrupt(m) => format!("corrupt input: {m}"),
        }
    }
}

impl From<higgs::Error> for CliError {
    fn from(e: higgs::Error) -> Self {
        CliError::Lib(e)
    }
}

/// A command's result: text lines for humans and a JSON object for scripts.
pub struct Report {
    pub lines: Vec<String>,
    pub value: Value,
}

fn run(cli: Cli) -> Result<Report, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let common = Common { seed: cli.seed, json: cli.json };
    match cli.command {
        Command::Grid(GridCommand::Build(a)) => commands::grid_build(&a, common),
        Command::Quantize(a) => commands::quantize(&a, common),
        Command::Dequantize(a) => commands::dequantize(&a, common),
        Command::Menu(MenuCommand::Build(a)) => commands::menu_build(&a, common),
        Command::Calibrate(a) => commands::calibrate(&a, common),
        Command::Allocate(a) => commands::allocate(&a, common),
        Command::Linearity(a) => commands::linearity(&a, common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_mode = cli.json;
    match run(cli) {
        Ok(report) => {
            if json_mode {
                println!("{}", serde_json::to_string_pretty(&report.value).expect("report serializes"));
            } else {
                for l in &report.lines {
                    println!("{l}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e.exit_code();
            if json_mode {
                println!("{}", json!({ "error": e.message(), "exit_code": code }));
            }
            eprintln!("error: {}", e.message());
            if let CliError::Lib(higgs::Error::Infeasible { min_avg_bits }) = &e {
                eprintln!("minimum feasible average bitwidth: {min_avg_bits:.6}");
            }
            ExitCode::from(code)
        }
    }
}

/// `LABEL=PATH` pairs from the command line.
pub fn parse_labeled(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((l, p)) if !l.is_empty() && !p.is_empty() => Ok((l.to_string(), PathBuf::from(p))),
        _ => Err(format!("expected LABEL=PATH, got {s:?}")),
    }
}
