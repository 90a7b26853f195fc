//! `bathysize`: solve, assemble, estimate, sweep, converge and verify.

mod artifacts;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::config::{Format, Overrides, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bathysize", version, about = "Size estimates for bottom changes from free-surface data")]
struct Args {
    /// What to run. May instead be given as `subcommand` in the config file.
    subcommand: Option<Subcommand>,

    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,

    #[arg(long)]
    nx: Option<usize>,

    #[arg(long)]
    ny: Option<usize>,

    /// Relative residual tolerance of the linear solves.
    #[arg(long)]
    tol: Option<f64>,

    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,

    /// Artifact formats to write.
    #[arg(long, value_delimiter = ',')]
    format: Option<Vec<Format>>,

    /// Surface data by name (`mode1`, `gaussian`, ...).
    #[arg(long, value_delimiter = ',')]
    datum: Option<Vec<String>>,

    /// Sweep amplitudes.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    amplitudes: Option<Vec<f64>>,

    /// Validate the configuration, print it with defaults filled in, and exit.
    #[arg(long)]
    dry_run: bool,

    /// Only print warnings and errors.
    #[arg(short, long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = if args.quiet { "warn" } else { "info" };
    env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();

    let overrides = Overrides {
        subcommand: args.subcommand,
        nx: args.nx,
        ny: args.ny,
        tol: args.tol,
        output: args.out,
        formats: args.format,
        datums: args.datum,
        amplitudes: args.amplitudes,
    };
    let dry_run = args.dry_run;
    let result = config::load(args.config.as_deref(), &overrides).and_then(|cfg| {
        if dry_run {
            print!("{}", cfg.canonical());
            Ok(())
        } else {
            run::run(&cfg)
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
