//! dscl: deformed semicircle laws for sparse random matrices.
//!
//! Exit codes: 0 success (all gates pass), 1 runtime or gate failure,
//! 2 configuration error.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::{Overrides, RunConfig};
use dscl_core::Error;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "dscl",
    about = "Deformed semicircle laws: solvers, sampling, and Monte Carlo verification",
    version
)]
struct Cli {
    /// JSON run configuration (one file per run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config key).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed (overrides the config key).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 = logical cores. Falls back to DSCL_WORKERS.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Envelope inflation exponent for verify experiments.
    #[arg(long, global = true)]
    epsilon: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Density sweep of the refined deformed semicircle law.
    Density,
    /// Support endpoints and the edge-expansion comparison.
    Edges,
    /// Classical eigenvalue locations.
    Locations,
    /// Draw and persist one ensemble sample.
    Sample,
    /// Run a named verification experiment.
    Verify { name: String },
    /// Render an existing report.json.
    Report { path: PathBuf },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = Cli::parse();

    if let Command::Report { path } = &cli.command {
        return match commands::cmd_report(path) {
            Ok(true) => 0,
            Ok(false) => 1,
            Err(e) => fail(&e),
        };
    }

    let Some(config_path) = &cli.config else {
        eprintln!("error: --config PATH is required");
        return 2;
    };
    let overrides = Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        workers: cli.workers,
        epsilon: cli.epsilon,
    };
    let cfg = match RunConfig::load(config_path, &overrides) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };

    let workers = match cfg.workers {
        0 => std::env::var("DSCL_WORKERS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or(0),
        w => w,
    };
    if workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            eprintln!("error: cannot size worker pool: {e}");
            return 2;
        }
    }

    let outcome = match &cli.command {
        Command::Density => commands::cmd_density(&cfg),
        Command::Edges => commands::cmd_edges(&cfg),
        Command::Locations => commands::cmd_locations(&cfg),
        Command::Sample => commands::cmd_sample(&cfg),
        Command::Verify { name } => match commands::cmd_verify(&cfg, name) {
            Ok(report) => {
                if report.verdict {
                    Ok(())
                } else {
                    eprintln!("verdict: FAIL (one or more gates exceeded)");
                    return 1;
                }
            }
            Err(e) => Err(e),
        },
        Command::Report { .. } => unreachable!("handled above"),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            if matches!(e, Error::SplitSupport { .. }) {
                let detail = commands::describe_split(&cfg);
                if !detail.is_empty() {
                    eprintln!("error: {detail}");
                    return 1;
                }
            }
            fail(&e)
        }
    }
}

fn fail(e: &Error) -> i32 {
    eprintln!("error: {e}");
    if e.is_config() {
        2
    } else {
        1
    }
}
