//! `reslab`: data generation, training, probes, sweeps and reports.
//!
//! Exit codes: 0 success, 1 a check failed, 2 infeasible data,
//! 3 I/O or shape problems, 4 usage errors.

mod commands;
mod config;
mod exit;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reslab::model::Arch;

use config::{Overrides, RunConfig};
use exit::{CliResult, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(name = "reslab", version, about = "Residual network laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat JSON config; flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    arch: Option<Arch>,
    /// Comma-separated probe names, or `all`.
    #[arg(long, global = true, value_delimiter = ',')]
    probes: Option<Vec<String>>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Sample a margin-separable training set and a held-out set.
    GenData,
    /// Run gradient descent on the dataset and record the trajectory.
    Train,
    /// Run probes and write one report per probe plus index.json.
    Probe,
    /// Train every (seed, width, arch, depth) cell and aggregate sweep.csv.
    Sweep,
    /// Compare analytic gradients with central differences.
    Gradcheck,
    /// Summarize every report under the output directory in report.md.
    Report,
}

fn run(cli: Cli) -> CliResult<()> {
    let flags = Overrides {
        seed: cli.seed,
        out: cli.out,
        arch: cli.arch,
        probes: cli.probes,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &flags)?;
    match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Probe => commands::probe_cmd(&cfg),
        Command::Sweep => sweep::sweep_cmd(&cfg),
        Command::Gradcheck => commands::gradcheck_cmd(&cfg),
        Command::Report => commands::report_cmd(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
