use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spb_cli::{cmd_check, cmd_compare, cmd_datagen, cmd_plot, cmd_run, CliError, Options};

/// Single-loop solvers for constrained bilevel saddle point problems.
#[derive(Parser)]
#[command(name = "spb", version)]
struct Cli {
    /// Run configuration (key = value lines, or a trace file to re-run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver and write a trace.
    Run,
    /// Validate the problem oracles and the set oracles.
    Check,
    /// Write a synthetic multi-task dataset as CSV files.
    Datagen,
    /// Plot gap_z of one or more traces as SVG.
    Plot { traces: Vec<PathBuf> },
    /// Run both variants and report threshold crossings.
    Compare,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = Options {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        quiet: cli.quiet,
    };
    let result: Result<(), CliError> = match &cli.command {
        Command::Run => cmd_run(&opts).map(drop),
        Command::Check => cmd_check(&opts).map(drop),
        Command::Datagen => cmd_datagen(&opts).map(drop),
        Command::Plot { traces } => cmd_plot(&opts, traces).map(drop),
        Command::Compare => cmd_compare(&opts).map(drop),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
