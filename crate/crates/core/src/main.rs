use std::ops::Range;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use quorumlab::scenario::{self, Protocol, Scenario};

#[derive(Parser)]
#[command(name = "quorumlab", version, about = "Run protocol scenarios in the deterministic simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace.
    Run {
        file: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        trace_dir: PathBuf,
        /// Overwrite an existing trace file.
        #[arg(long)]
        force: bool,
    },
    /// Run a scenario for every seed in `A..B`.
    Sweep {
        file: PathBuf,
        #[arg(long, value_parser = parse_range)]
        seeds: Range<u64>,
    },
    /// Print a protocol's parameters and invariants.
    Explain { protocol: String },
}

fn parse_range(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or("expected A..B")?;
    let a = a.trim().parse::<u64>().map_err(|e| format!("{a:?}: {e}"))?;
    let b = b.trim().parse::<u64>().map_err(|e| format!("{b:?}: {e}"))?;
    Ok(a..b)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> quorumlab::Result<bool> {
    match command {
        Command::Run { file, seed, trace_dir, force } => {
            let sc = Scenario::load(&file)?;
            let (report, path) = scenario::run(&sc, seed, &trace_dir, force)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
            eprintln!("trace: {}", path.display());
            Ok(report.passed)
        }
        Command::Sweep { file, seeds } => {
            let sc = Scenario::load(&file)?;
            let report = scenario::sweep(&sc, seeds)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
            Ok(report.passed())
        }
        Command::Explain { protocol } => {
            print!("{}", scenario::explain(Protocol::from_name(&protocol)?));
            Ok(true)
        }
    }
}
