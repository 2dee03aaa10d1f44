use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use did6g_core::registry::Ledger;
use did6g_core::scenario::{run_scenario, ScenarioConfig, ScenarioKind};

/// Scenario runner and ledger inspector for DID-based identity in mobile
/// networks.
#[derive(Debug, Parser)]
#[command(name = "did6g", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its JSON report.
    Run {
        /// roaming, nf-access, iot-onboarding or consensus-sweep.
        scenario: ScenarioKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        /// Also write the final ledger state for `ledger inspect`.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Ledger state files.
    Ledger {
        #[command(subcommand)]
        command: LedgerCommand,
    },
}

#[derive(Debug, Subcommand)]
enum LedgerCommand {
    /// Print one JSON line per block: height, prevHash, blockHash, txIds.
    Inspect {
        #[arg(long)]
        state: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{0}")]
    Scenario(#[from] did6g_core::scenario::ScenarioError),
    #[error("consensus sweeps leave no ledger; drop --state")]
    NoLedger,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

/// Returns whether the scenario succeeded.
fn run(kind: ScenarioKind, config: &Path, seed: u64, output: &Path, state: Option<&Path>) -> Result<bool, CliError> {
    let cfg = ScenarioConfig::from_json(&read(config)?)
        .map_err(|e| CliError::Invalid { path: config.to_owned(), message: e.to_string() })?;
    let out = run_scenario(kind, &cfg, seed)?;
    if let Some(path) = state {
        let ledger = out.ledger().ok_or(CliError::NoLedger)?;
        write(path, &ledger.to_json())?;
    }
    write(output, &out.to_json())?;
    Ok(out.is_success())
}

fn inspect(state: &Path) -> Result<(), CliError> {
    let invalid = |e: &dyn std::fmt::Display| CliError::Invalid { path: state.to_owned(), message: e.to_string() };
    let ledger = Ledger::from_json(&read(state)?).map_err(|e| invalid(&e))?;
    for line in ledger.inspect_lines().map_err(|e| invalid(&e))? {
        println!("{line}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Run { scenario, config, seed, output, state } => {
            run(scenario, &config, seed, &output, state.as_deref()).map(|ok| if ok { 0 } else { 2 })
        }
        Command::Ledger { command: LedgerCommand::Inspect { state } } => inspect(&state).map(|()| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("did6g: {e}");
            ExitCode::from(1)
        }
    }
}
