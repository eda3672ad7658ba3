//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "gaussian"
//!
//! [grid]
//! x_min = -10.0
//! x_max = 10.0
//! n = 801
//!
//! [mu0]
//! kind = "gaussian"
//! mean = 0.0
//! var = 1.0
//!
//! [mu_t]
//! kind = "mixture"
//! components = [[0.5, -1.0, 0.5], [0.5, 2.0, 0.4]]   # weight, mean, var
//!
//! [solver]
//! beta = 1.0
//! horizon_t = 1.0            # every other field is optional
//!
//! [verify]                   # optional Monte-Carlo check
//! n_paths = 100000
//! n_steps = 200
//! seed = 1
//!
//! [sweep]                    # optional; replaces solver.beta
//! betas = [0.01, 0.1, 1.0, 10.0, 100.0]
//! ```
//!
//! A measure may also be read from a CSV file with columns `x,density`
//! (`kind = "from_csv"`, `path` relative to the scenario file).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sbb_core::sde::SimConfig;
use sbb_core::{make_gaussian, make_mixture, Execution, Grid1D, Measure1D, Mode, Nu0Policy, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub grid: GridSpec,
    pub mu0: MeasureSpec,
    pub mu_t: MeasureSpec,
    pub solver: SolverSpec,
    pub verify: Option<VerifySpec>,
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    Gaussian { mean: f64, var: f64 },
    Mixture { components: Vec<(f64, f64, f64)> },
    FromCsv { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nu0Choice {
    MatchMu0,
    StandardGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub beta: Option<f64>,
    pub horizon_t: f64,
    pub max_iters: Option<usize>,
    pub tol_marginal: Option<f64>,
    pub damping: Option<f64>,
    pub density_floor: Option<f64>,
    pub nu0_policy: Option<Nu0Choice>,
    pub output_times: Option<Vec<f64>>,
    pub mode: Option<Mode>,
    pub stall_tol: Option<f64>,
    pub sequential: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub boundary_clamp: Option<f64>,
    pub time_slices: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub betas: Vec<f64>,
}

/// A scenario with its measures loaded, one solver config per beta.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    pub mu0: Measure1D,
    pub mu_t: Measure1D,
    pub entries: Vec<SolverConfig>,
    pub verify: Option<SimConfig>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario> {
        let s: Scenario = toml::from_str(text)?;
        if s.name.is_empty() || s.name.contains(['/', '\\']) || s.name == "." || s.name == ".." {
            bail!("field `name`: must be a non-empty plain directory name, got {:?}", s.name);
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Scenario::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn betas(&self) -> Result<Vec<f64>> {
        let betas = match (&self.sweep, self.solver.beta) {
            (Some(sw), _) => sw.betas.clone(),
            (None, Some(b)) => vec![b],
            (None, None) => bail!("field `solver.beta`: required unless a [sweep] is given"),
        };
        if betas.is_empty() {
            bail!("field `sweep.betas`: must not be empty");
        }
        if let Some(b) = betas.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            bail!("field `beta`: must be positive and finite, got {b}");
        }
        Ok(betas)
    }

    /// Load measures and build a validated config for every beta. Relative
    /// CSV paths are taken from `base`.
    pub fn resolve(self, base: &Path) -> Result<Resolved> {
        let g = &self.grid;
        let grid = Grid1D::new(g.x_min, g.x_max, g.n).context("field `grid`")?;
        let mu0 = build_measure(&self.mu0, grid, base).context("field `mu0`")?;
        let mu_t = build_measure(&self.mu_t, grid, base).context("field `mu_t`")?;
        let mut entries = Vec::new();
        for beta in self.betas()? {
            let cfg = solver_config(&self.solver, beta, grid);
            cfg.validate()?;
            entries.push(cfg);
        }
        let verify = self.verify.as_ref().map(|v| {
            let mut sim = SimConfig::new(v.n_paths, v.n_steps, v.seed);
            if let Some(c) = v.boundary_clamp {
                sim.boundary_clamp = c;
            }
            if let Some(k) = v.time_slices {
                sim.time_slices = k;
            }
            sim
        });
        if let Some(sim) = &verify {
            sim.validate().context("section `verify`")?;
        }
        Ok(Resolved { scenario: self, mu0, mu_t, entries, verify })
    }
}

fn solver_config(s: &SolverSpec, beta: f64, grid: Grid1D) -> SolverConfig {
    let mut c = SolverConfig::new(beta, s.horizon_t, grid);
    if let Some(v) = s.max_iters {
        c.max_iters = v;
    }
    if let Some(v) = s.tol_marginal {
        c.tol_marginal = v;
    }
    if let Some(v) = s.damping {
        c.damping = v;
    }
    if let Some(v) = s.density_floor {
        c.density_floor = v;
    }
    if let Some(v) = s.nu0_policy {
        c.nu0_policy = match v {
            Nu0Choice::MatchMu0 => Nu0Policy::MatchMu0,
            Nu0Choice::StandardGaussian => Nu0Policy::StandardGaussian,
        };
    }
    if let Some(v) = &s.output_times {
        c.output_times = v.clone();
    }
    if let Some(v) = s.mode {
        c.mode = v;
    }
    if let Some(v) = s.stall_tol {
        c.stall_tol = v;
    }
    if s.sequential == Some(true) {
        c.execution = Execution::Sequential;
    }
    c
}

fn build_measure(spec: &MeasureSpec, grid: Grid1D, base: &Path) -> Result<Measure1D> {
    Ok(match spec {
        MeasureSpec::Gaussian { mean, var } => make_gaussian(grid, *mean, *var)?,
        MeasureSpec::Mixture { components } => make_mixture(grid, components)?,
        MeasureSpec::FromCsv { path } => {
            let path = base.join(path);
            let (header, cols) = sbb_core::io::read_columns(&path)?;
            if header != ["x", "density"] {
                bail!("{}: expected columns x,density, found {header:?}", path.display());
            }
            let (x, d) = (&cols[0], &cols[1]);
            if x.len() < 2 || x.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
                bail!("{}: x must be strictly increasing with at least two rows", path.display());
            }
            // Linear interpolation onto the grid, zero outside the data.
            let density = grid
                .nodes()
                .into_iter()
                .map(|xi| {
                    if xi < x[0] || xi > x[x.len() - 1] {
                        return 0.0;
                    }
                    let j = x.partition_point(|v| *v <= xi).clamp(1, x.len() - 1);
                    let s = (xi - x[j - 1]) / (x[j] - x[j - 1]);
                    d[j - 1] + s * (d[j] - d[j - 1])
                })
                .collect();
            Measure1D::new(grid, density)?
        }
    })
}

/// SHA-256 over everything that determines one entry's output: the solver
/// config, both resolved densities and the verification settings.
pub fn inputs_hash(cfg: &SolverConfig, mu0: &Measure1D, mu_t: &Measure1D, verify: Option<&SimConfig>) -> String {
    #[derive(Serialize)]
    struct Inputs<'a> {
        config: &'a SolverConfig,
        mu0: &'a Measure1D,
        mu_t: &'a Measure1D,
        verify: Option<&'a SimConfig>,
    }
    let bytes = serde_json::to_vec(&Inputs { config: cfg, mu0, mu_t, verify }).expect("inputs serialise");
    hex::encode(Sha256::digest(bytes))
}
