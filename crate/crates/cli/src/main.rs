//! `nozzle`: solves compressible potential flow through an infinite nozzle
//! with an obstacle and verifies the far-field theory on the output.

mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use pipeline::Pipeline;

#[derive(Parser)]
#[command(name = "nozzle", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Path to a `section.key = value` configuration file.
    config: PathBuf,
    /// Force the deterministic sequential pipeline (always on; accepted for
    /// interface stability).
    #[arg(long)]
    sequential: bool,
    /// Output directory for field dumps, tables, reports and the manifest.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Single solve: field dump, mesh dump, report.
    Solve(RunArgs),
    /// Continuation sweep over `flux.list` with a critical-flux bracket.
    Sweep(RunArgs),
    /// Solve, then measure and fit the far-field decay of the deviation.
    DecayStudy(RunArgs),
    /// Solve, then certify the lower bound on the deviation per station.
    OptimalityStudy(RunArgs),
    /// Run the property battery on the configured problem.
    Verify(RunArgs),
    /// Compare two field dumps on their shared lattice points.
    Diff { a: PathBuf, b: PathBuf },
}

fn load(args: &RunArgs) -> Result<(RunConfig, Pipeline), ExitCode> {
    let cfg = match RunConfig::from_file(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return Err(ExitCode::from(2));
        }
    };
    match Pipeline::new(cfg.clone(), &args.out) {
        Ok(p) => Ok((cfg, p)),
        Err(e) => {
            eprintln!("error: {e:#}");
            Err(ExitCode::from(1))
        }
    }
}

fn run(result: anyhow::Result<()>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Solve(args) => match load(&args) {
            Ok((_, mut p)) => run(p.run_solve()),
            Err(code) => code,
        },
        Cmd::Sweep(args) => match load(&args) {
            Ok((_, mut p)) => run(p.run_sweep()),
            Err(code) => code,
        },
        Cmd::DecayStudy(args) => match load(&args) {
            Ok((_, mut p)) => run(p.run_decay_study()),
            Err(code) => code,
        },
        Cmd::OptimalityStudy(args) => match load(&args) {
            Ok((_, mut p)) => run(p.run_optimality_study()),
            Err(code) => code,
        },
        Cmd::Verify(args) => match load(&args) {
            Ok((_, mut p)) => match p.run_verify() {
                Ok(0) => ExitCode::SUCCESS,
                Ok(failures) => {
                    eprintln!("{failures} verification check(s) failed");
                    ExitCode::from(1)
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(1)
                }
            },
            Err(code) => code,
        },
        Cmd::Diff { a, b } => match pipeline::diff_fields(&a, &b) {
            Ok(diff) => {
                println!("shared_points = {}", diff.shared_points);
                println!("phi.max = {:.12e}", diff.phi_max);
                println!("phi.l2 = {:.12e}", diff.phi_l2);
                println!("grad.max = {:.12e}", diff.grad_max);
                println!("grad.l2 = {:.12e}", diff.grad_l2);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}
