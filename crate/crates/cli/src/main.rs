//! `sbb`: run Schrödinger–Bass bridge scenarios and compare their outputs.
//!
//! Exit codes: 0 on success, 2 when a run finishes without converging,
//! 1 on any error.

mod compare;
mod run;
mod scenario;

use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sbb", version, about = "Schrödinger–Bass bridge solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write its outputs.
    Run {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of sweep entries solved concurrently.
        #[arg(long, default_value_t = 1)]
        sweep_parallel: usize,
    },
    /// Distances between two solution directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Parse and check a scenario without solving it.
    Validate { file: PathBuf },
}

fn validate(file: &Path) -> Result<()> {
    let base = file.parent().unwrap_or(Path::new("."));
    let r = scenario::Scenario::load(file)?.resolve(base)?;
    let betas: Vec<f64> = r.entries.iter().map(|c| c.beta).collect();
    println!(
        "{}: ok ({} grid nodes, beta {:?}, verify {})",
        r.scenario.name,
        r.mu0.grid().len(),
        betas,
        if r.verify.is_some() { "on" } else { "off" }
    );
    Ok(())
}

fn execute(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run { file, out, sweep_parallel } => {
            let rows = run::run(&file, &out, sweep_parallel)?;
            for r in &rows {
                println!(
                    "beta {}: {} cost {:.6e} sup_map_dev {:.3e} w2_t0 {:.3e} w2_T {:.3e}",
                    r.beta,
                    if r.converged { "converged" } else { "NOT converged" },
                    r.cost,
                    r.sup_map_dev,
                    r.w2_t0,
                    r.w2_t
                );
                if r.edge_mass > sbb_core::solver::EDGE_MASS_TOL {
                    println!("  warning: bridge law has mass {:.2e} at the grid edge; widen the grid", r.edge_mass);
                }
            }
            Ok(if rows.iter().all(|r| r.converged) { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Compare { a, b, json } => {
            let report = compare::compare(&a, &b)?;
            let text = if json { serde_json::to_string_pretty(&report)? + "\n" } else { report.to_table() };
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { file } => {
            validate(&file)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors exit with 1; clap's default of 2 would read as
    // non-convergence.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        // A closed pipe (e.g. `| head`) is not a failure of the command.
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
