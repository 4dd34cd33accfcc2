//! Command-line front end for the experiment harness.
//!
//! ```text
//! smp run <config> [--seeds a,b,c] [--out dir] [--oracle] [--workers k]
//! smp compare <a.csv> <b.csv>
//! ```
//!
//! Exit codes: 0 success, 1 I/O or file-format error, 2 config error,
//! 3 numerical abort in at least one replication.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smp_core::bench::{self, BenchError};

#[derive(Parser)]
#[command(name = "smp", about = "Run message-passing recovery experiments and compare their metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config file and write per-seed and aggregate CSVs.
    Run {
        config: PathBuf,
        /// Seeds as `a,b,c` or `a..b`, replacing the config's list.
        #[arg(long)]
        seeds: Option<String>,
        /// Output directory, replacing the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Turn on oracle mode (oracle variances and full diagnostics).
        #[arg(long)]
        oracle: bool,
        /// Worker threads; defaults to $SMP_WORKERS or the CPU count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Per-iteration NMSE difference (dB) and α-error ratio of two CSV files.
    Compare { a: PathBuf, b: PathBuf },
}

fn run(config: PathBuf, seeds: Option<String>, out: Option<PathBuf>, oracle: bool, workers: Option<usize>) -> Result<i32, BenchError> {
    let text = std::fs::read_to_string(&config)
        .map_err(|e| BenchError::Io { path: config.clone(), message: e.to_string() })?;
    let mut cfg = bench::parse_config(&text)?;
    if let Some(seeds) = seeds {
        cfg.seeds = bench::parse_seeds(&seeds)
            .map_err(|message| BenchError::Config(bench::ConfigError { line: None, message: format!("--seeds: {message}") }))?;
    }
    if let Some(out) = out {
        cfg.output = out;
    }
    cfg.oracle |= oracle;
    let outcome = bench::run_experiment(&cfg, workers.unwrap_or_else(bench::default_workers))?;
    for s in &outcome.seeds {
        match &s.aborted {
            None => println!("seed {}: {} iterations -> {}", s.seed, s.record.rows.len(), s.path.display()),
            Some(reason) => eprintln!("seed {}: {reason} (partial output in {})", s.seed, s.path.display()),
        }
    }
    println!("aggregate -> {}", outcome.aggregate_path.display());
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seeds, out, oracle, workers } => run(config, seeds, out, oracle, workers),
        Command::Compare { a, b } => bench::compare_runs(&a, &b).map(|cmp| {
            println!("{cmp}");
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
