//! The `run` command: solve every entry of a scenario and write its outputs.
//!
//! ```text
//! <out>/<name>/sweep_summary.csv          beta,cost,sup_map_dev,w2_t0,w2_T
//! <out>/<name>/beta_<beta>/manifest.json
//! <out>/<name>/beta_<beta>/verification.json   (with [verify])
//! <out>/<name>/beta_<beta>/paths_<scheme>.csv  (with [verify])
//! <out>/<name>/beta_<beta>/...                 solution layout
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use sbb_core::measure::wasserstein2_samples;
use sbb_core::sde::{
    likelihood_check, martingale_defect, primal_cost, simulate_direct, simulate_stretched, Estimate,
    LikelihoodCheck, MartingaleDefect, SimConfig,
};
use sbb_core::solver::{central_region, field_cost};
use sbb_core::{Mode, SbbSolution, SolverConfig};

use crate::scenario::{inputs_hash, Resolved, Scenario};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VERIFICATION_FILE: &str = "verification.json";
pub const SUMMARY_FILE: &str = "sweep_summary.csv";

/// Mass of the terminal bridge law over which `sup_map_dev` is taken.
pub const MAP_DEV_MASS: f64 = 0.98;

#[derive(Debug, Serialize)]
struct Versions {
    sbb_core: &'static str,
    sbb_cli: &'static str,
}

#[derive(Debug, Serialize)]
struct Timings {
    solve_seconds: f64,
    verify_seconds: f64,
    write_seconds: f64,
}

#[derive(Debug, Serialize)]
struct Manifest {
    scenario: String,
    beta: f64,
    mode: Mode,
    inputs_hash: String,
    versions: Versions,
    timings: Timings,
    converged: bool,
    iterations: usize,
    w2_t0: f64,
    w2_t: f64,
    /// Mass of the bridge law on the outer grid cells; large values mean
    /// the grid cuts it off.
    bridge_edge_mass: f64,
}

#[derive(Debug, Serialize)]
struct Verification {
    primal_cost: Estimate,
    field_cost: f64,
    martingale: MartingaleDefect,
    likelihood: LikelihoodCheck,
    /// W2 between direct and stretched ensembles at each output time.
    w2_direct_vs_stretched: Vec<(f64, f64)>,
    escapes_direct: usize,
    escapes_stretched: usize,
}

/// One row of the sweep summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub beta: f64,
    pub cost: f64,
    pub sup_map_dev: f64,
    pub w2_t0: f64,
    pub w2_t: f64,
    pub converged: bool,
    pub edge_mass: f64,
}

pub fn entry_dir(out: &Path, name: &str, beta: f64) -> PathBuf {
    out.join(name).join(format!("beta_{beta}"))
}

/// `sup |X(T, y) - y|` over the central [`MAP_DEV_MASS`] of the terminal
/// bridge law.
pub fn terminal_map_deviation(sol: &SbbSolution) -> Result<f64> {
    let k = sol.times().len() - 1;
    let (lo, hi) = central_region(&sol.y_laws[k], MAP_DEV_MASS)?;
    let g = *sol.grid();
    Ok((0..g.len())
        .filter(|&i| (lo..=hi).contains(&g.node(i)))
        .map(|i| (sol.maps_x[k].values()[i] - g.node(i)).abs())
        .fold(0.0, f64::max))
}

fn verify(sol: &SbbSolution, sim: &SimConfig, dir: &Path) -> Result<Verification> {
    let direct = simulate_direct(sol, sim)?;
    let stretched = simulate_stretched(sol, sim)?;
    direct.write_summary_csv(&dir.join("paths_direct.csv"))?;
    stretched.write_summary_csv(&dir.join("paths_stretched.csv"))?;
    let w2 = (0..direct.times.len())
        .map(|k| (direct.times[k], wasserstein2_samples(&direct.slice(k), &stretched.slice(k), 1000)))
        .collect();
    Ok(Verification {
        primal_cost: primal_cost(&direct, sol)?,
        field_cost: field_cost(sol, 32)?,
        martingale: martingale_defect(&direct, sol)?,
        likelihood: likelihood_check(&stretched, sol)?,
        w2_direct_vs_stretched: w2,
        escapes_direct: direct.escapes,
        escapes_stretched: stretched.escapes,
    })
}

fn run_entry(r: &Resolved, cfg: &SolverConfig, out: &Path) -> Result<SummaryRow> {
    let name = &r.scenario.name;
    let dir = entry_dir(out, name, cfg.beta);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let start = Instant::now();
    let sol = sbb_core::solve(&r.mu0, &r.mu_t, cfg).with_context(|| format!("solving {name} at beta = {}", cfg.beta))?;
    let solve_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    if let Some(sim) = &r.verify {
        let v = verify(&sol, sim, &dir).with_context(|| format!("verifying {name} at beta = {}", cfg.beta))?;
        fs::write(dir.join(VERIFICATION_FILE), serde_json::to_string_pretty(&v)?)?;
    }
    let verify_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    sbb_core::io::write_solution(&sol, &dir).with_context(|| format!("writing {}", dir.display()))?;
    let write_seconds = start.elapsed().as_secs_f64();

    let (w2_t0, w2_t) = sol.boundary_defects();
    let manifest = Manifest {
        scenario: name.clone(),
        beta: cfg.beta,
        mode: cfg.mode,
        inputs_hash: inputs_hash(cfg, &r.mu0, &r.mu_t, r.verify.as_ref()),
        versions: Versions {
            sbb_core: sbb_core::VERSION,
            sbb_cli: env!("CARGO_PKG_VERSION"),
        },
        timings: Timings { solve_seconds, verify_seconds, write_seconds },
        converged: sol.converged,
        iterations: sol.iterations(),
        w2_t0,
        w2_t,
        bridge_edge_mass: sol.bridge_edge_mass(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    info!(
        "{name} beta = {}: {} in {} sweeps ({solve_seconds:.2}s)",
        cfg.beta,
        if sol.converged { "converged" } else { "not converged" },
        sol.iterations()
    );
    Ok(SummaryRow {
        beta: cfg.beta,
        cost: field_cost(&sol, 32)?,
        sup_map_dev: terminal_map_deviation(&sol)?,
        w2_t0,
        w2_t,
        converged: sol.converged,
        edge_mass: sol.bridge_edge_mass(),
    })
}

fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut text = String::from("beta,cost,sup_map_dev,w2_t0,w2_T\n");
    for r in rows {
        text.push_str(&format!("{:?},{:?},{:?},{:?},{:?}\n", r.beta, r.cost, r.sup_map_dev, r.w2_t0, r.w2_t));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Run every entry, `parallel` of them at a time. Returns the summary rows
/// in scenario order.
pub fn run(file: &Path, out: &Path, parallel: usize) -> Result<Vec<SummaryRow>> {
    let base = file.parent().unwrap_or(Path::new("."));
    let resolved = Scenario::load(file)?.resolve(base)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(parallel.max(1)).build()?;
    let rows: Vec<SummaryRow> = pool.install(|| {
        resolved
            .entries
            .par_iter()
            .map(|cfg| run_entry(&resolved, cfg, out))
            .collect::<Result<_>>()
    })?;
    write_summary(&rows, &out.join(&resolved.scenario.name).join(SUMMARY_FILE))?;
    Ok(rows)
}
