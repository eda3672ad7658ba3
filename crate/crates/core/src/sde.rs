//! Monte-Carlo simulation of the optimal process.
//!
//! The direct scheme integrates `dX = alpha(t, X) dt + sigma(t, X) dW` with
//! Euler–Maruyama. The stretched scheme integrates the bridge coordinate
//! `dY = (log h)'(t, Y) dt + dW` and reports `X = X(t, Y)`. Path `p` draws
//! from its own ChaCha8 stream, so ensembles do not depend on thread count
//! or scheduling.

use std::io::Write;
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::convex::derivative;
use crate::error::{Result, SbbError};
use crate::exec::{map_range, Execution};
use crate::grid::Grid1D;
use crate::maps::ProcessCoefficients;
use crate::solver::SbbSolution;

/// Share of escaping paths above which a simulation fails.
pub const MAX_ESCAPE_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Direct,
    Stretched,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Direct => "direct",
            Scheme::Stretched => "stretched",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Distance inside the grid edges at which paths are reflected.
    #[serde(default)]
    pub boundary_clamp: f64,
    /// Number of equal time intervals on which the coefficient fields are
    /// tabulated before linear interpolation in time.
    #[serde(default = "default_time_slices")]
    pub time_slices: usize,
    /// Replace the volatility by 1 in the direct scheme. Only useful to
    /// check that the diagnostics notice a misspecified model.
    #[serde(default)]
    pub unit_volatility: bool,
    #[serde(default)]
    pub execution: Execution,
}

fn default_time_slices() -> usize {
    50
}

impl SimConfig {
    pub const MIN_PATHS: usize = 10_000;
    pub const MIN_STEPS: usize = 100;

    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        SimConfig {
            n_paths,
            n_steps,
            seed,
            boundary_clamp: 0.0,
            time_slices: default_time_slices(),
            unit_volatility: false,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(SbbError::InvalidConfig { field, reason });
        if self.n_paths < Self::MIN_PATHS {
            return bad("n_paths", format!("must be at least {}, got {}", Self::MIN_PATHS, self.n_paths));
        }
        if self.n_steps < Self::MIN_STEPS {
            return bad("n_steps", format!("must be at least {}, got {}", Self::MIN_STEPS, self.n_steps));
        }
        if !(self.boundary_clamp >= 0.0) || !self.boundary_clamp.is_finite() {
            return bad("boundary_clamp", format!("must be finite and non-negative, got {}", self.boundary_clamp));
        }
        if self.time_slices == 0 {
            return bad("time_slices", "must be at least 1".into());
        }
        Ok(())
    }
}

/// Simulated states at the solution's output times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub times: Vec<f64>,
    /// Row-major `n_paths x times.len()` matrix of states `X`.
    pub states: Vec<f64>,
    /// Bridge coordinate `Y`, same layout; stretched scheme only.
    pub y_states: Option<Vec<f64>>,
    /// Per-path `∫ (alpha^2 + beta (sigma - 1)^2) / 2 dt`; direct scheme only.
    pub running_cost: Option<Vec<f64>>,
    pub seed: u64,
    pub scheme: Scheme,
    /// Paths that touched the reflecting boundary at least once.
    pub escapes: usize,
}

impl PathEnsemble {
    pub fn state(&self, path: usize, k: usize) -> f64 {
        self.states[path * self.times.len() + k]
    }

    /// All states at time index `k`.
    pub fn slice(&self, k: usize) -> Vec<f64> {
        column(&self.states, self.times.len(), k)
    }

    pub fn y_slice(&self, k: usize) -> Option<Vec<f64>> {
        self.y_states.as_ref().map(|y| column(y, self.times.len(), k))
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|s| (s - t).abs() <= 1e-12 * (1.0 + t.abs()))
            .ok_or(SbbError::TimeNotStored(t))
    }

    /// Per-time summary rows: time, mean, var, q05, q25, q50, q75, q95.
    pub fn summary(&self) -> Vec<[f64; 8]> {
        (0..self.times.len())
            .map(|k| {
                let mut s = self.slice(k);
                s.sort_by(f64::total_cmp);
                let (mean, var) = mean_var(&s);
                let q = |u: f64| sorted_quantile(&s, u);
                [self.times[k], mean, var, q(0.05), q(0.25), q(0.5), q(0.75), q(0.95)]
            })
            .collect()
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time", "mean", "var", "q05", "q25", "q50", "q75", "q95"])?;
        for row in self.summary() {
            w.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Every path as one row of states at the output times.
    pub fn write_raw_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = self.times.iter().map(|t| format!("t{t:?}")).collect();
        writeln!(f, "path,{}", header.join(","))?;
        let m = self.times.len();
        for p in 0..self.n_paths {
            let row: Vec<String> = self.states[p * m..(p + 1) * m].iter().map(|v| format!("{v:?}")).collect();
            writeln!(f, "{p},{}", row.join(","))?;
        }
        Ok(())
    }
}

fn column(data: &[f64], m: usize, k: usize) -> Vec<f64> {
    data.iter().skip(k).step_by(m).copied().collect()
}

fn mean_var(s: &[f64]) -> (f64, f64) {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

fn sorted_quantile(s: &[f64], u: f64) -> f64 {
    let pos = u * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(s.len() - 1);
    s[i] + (pos - i as f64) * (s[j] - s[i])
}

/// Fields tabulated on a uniform time lattice, linearly interpolated in
/// time and space.
struct FieldTable {
    grid: Grid1D,
    t_end: f64,
    rows_a: Vec<Vec<f64>>,
    rows_b: Vec<Vec<f64>>,
}

impl FieldTable {
    fn at(&self, t: f64, x: f64) -> (f64, f64) {
        let m = self.rows_a.len() - 1;
        let pos = (t / self.t_end * m as f64).clamp(0.0, m as f64);
        let j = (pos.floor() as usize).min(m.saturating_sub(1));
        let th = if m == 0 { 0.0 } else { pos - j as f64 };
        let j1 = (j + 1).min(m);
        let g = &self.grid;
        let a = (1.0 - th) * g.interp_clamped(&self.rows_a[j], x) + th * g.interp_clamped(&self.rows_a[j1], x);
        let b = (1.0 - th) * g.interp_clamped(&self.rows_b[j], x) + th * g.interp_clamped(&self.rows_b[j1], x);
        (a, b)
    }
}

fn lattice(sol: &SbbSolution, sim: &SimConfig) -> Vec<f64> {
    let t_end = sol.config.horizon_t;
    (0..=sim.time_slices)
        .map(|j| t_end * j as f64 / sim.time_slices as f64)
        .collect()
}

fn coefficient_table(sol: &SbbSolution, sim: &SimConfig) -> Result<FieldTable> {
    let coeffs: Vec<ProcessCoefficients> =
        lattice(sol, sim).into_iter().map(|t| sol.coefficients_at(t)).collect::<Result<_>>()?;
    Ok(FieldTable {
        grid: *sol.grid(),
        t_end: sol.config.horizon_t,
        rows_a: coeffs.iter().map(|c| c.alpha.clone()).collect(),
        rows_b: coeffs.into_iter().map(|c| c.sigma).collect(),
    })
}

/// Nelson drift `(log h)'` on the bridge grid; the second row is unused.
fn drift_table(sol: &SbbSolution, sim: &SimConfig) -> Result<FieldTable> {
    let g = *sol.grid();
    let rows: Vec<Vec<f64>> = lattice(sol, sim)
        .into_iter()
        .map(|t| sol.fields_at(t).map(|(l, _)| derivative(&l, g.dx())))
        .collect::<Result<_>>()?;
    Ok(FieldTable {
        grid: g,
        t_end: sol.config.horizon_t,
        rows_b: rows.clone(),
        rows_a: rows,
    })
}

/// Step index of every output time; each must fall on the step lattice.
fn record_steps(sol: &SbbSolution, n_steps: usize) -> Result<Vec<usize>> {
    let t_end = sol.config.horizon_t;
    sol.times()
        .iter()
        .map(|&t| {
            let pos = t / t_end * n_steps as f64;
            let k = pos.round();
            if (pos - k).abs() > 1e-9 {
                return Err(SbbError::InvalidConfig {
                    field: "n_steps",
                    reason: format!("output time {t} does not fall on a step of the {n_steps}-step lattice"),
                });
            }
            Ok(k as usize)
        })
        .collect()
}

/// Reflect `x` into `[lo, hi]`; returns whether reflection was needed.
#[inline]
fn reflect(x: &mut f64, lo: f64, hi: f64) -> bool {
    if *x >= lo && *x <= hi {
        return false;
    }
    let width = hi - lo;
    let mut r = (*x - lo).rem_euclid(2.0 * width);
    if r > width {
        r = 2.0 * width - r;
    }
    *x = lo + r;
    true
}

fn rng_for(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Open-interval uniform from the first draw of a path's stream.
fn initial_uniform(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    u.clamp(1e-12, 1.0 - 1e-12)
}

/// Initial states `X_0 = F_{mu0}^{-1}(U)`, one per path.
fn initial_states(sol: &SbbSolution, sim: &SimConfig) -> Result<Vec<f64>> {
    let us = map_range(sim.execution, sim.n_paths, |p| initial_uniform(&mut rng_for(sim.seed, p)));
    sol.mu0.quantiles(&us)
}

struct PathOut {
    states: Vec<f64>,
    y: Vec<f64>,
    cost: f64,
    escaped: bool,
}

fn check_escapes(escapes: usize, total: usize) -> Result<()> {
    if escapes as f64 > MAX_ESCAPE_FRACTION * total as f64 {
        return Err(SbbError::PathEscape { count: escapes, total });
    }
    if escapes > 0 {
        warn!("{escapes} of {total} paths were reflected at the domain margin");
    }
    Ok(())
}

fn bounds(sol: &SbbSolution, sim: &SimConfig) -> Result<(f64, f64)> {
    let g = sol.grid();
    let (lo, hi) = (g.x_min() + sim.boundary_clamp, g.x_max() - sim.boundary_clamp);
    if !(hi > lo) {
        return Err(SbbError::InvalidConfig {
            field: "boundary_clamp",
            reason: "margin leaves no interior".into(),
        });
    }
    Ok((lo, hi))
}

fn check_inputs(sol: &SbbSolution, sim: &SimConfig) -> Result<Vec<usize>> {
    sim.validate()?;
    if !sol.converged {
        warn!("simulating an unconverged solution");
    }
    record_steps(sol, sim.n_steps)
}

/// Euler–Maruyama paths of `dX = alpha dt + sigma dW` from `X_0 ~ mu0`.
pub fn simulate_direct(sol: &SbbSolution, sim: &SimConfig) -> Result<PathEnsemble> {
    let rec = check_inputs(sol, sim)?;
    let (lo, hi) = bounds(sol, sim)?;
    let table = coefficient_table(sol, sim)?;
    let x0 = initial_states(sol, sim)?;
    let t_end = sol.config.horizon_t;
    let dt = t_end / sim.n_steps as f64;
    let sq = dt.sqrt();
    let beta = sol.beta();
    let m = rec.len();
    let outs = map_range(sim.execution, sim.n_paths, |p| {
        let mut rng = rng_for(sim.seed, p);
        initial_uniform(&mut rng);
        let mut x = x0[p];
        let mut states = Vec::with_capacity(m);
        let mut next = 0;
        let mut cost = 0.0;
        let mut escaped = false;
        for n in 0..=sim.n_steps {
            if next < m && rec[next] == n {
                states.push(x);
                next += 1;
            }
            if n == sim.n_steps {
                break;
            }
            let (a, s) = table.at(n as f64 * dt, x);
            cost += 0.5 * (a * a + beta * (s - 1.0) * (s - 1.0)) * dt;
            let s = if sim.unit_volatility { 1.0 } else { s };
            let z: f64 = rng.sample(StandardNormal);
            x += a * dt + s * sq * z;
            escaped |= reflect(&mut x, lo, hi);
        }
        PathOut { states, y: Vec::new(), cost, escaped }
    });
    let escapes = outs.iter().filter(|o| o.escaped).count();
    check_escapes(escapes, sim.n_paths)?;
    Ok(PathEnsemble {
        n_paths: sim.n_paths,
        times: sol.times().to_vec(),
        states: outs.iter().flat_map(|o| o.states.iter().copied()).collect(),
        y_states: None,
        running_cost: Some(outs.iter().map(|o| o.cost).collect()),
        seed: sim.seed,
        scheme: Scheme::Direct,
        escapes,
    })
}

/// Euler–Maruyama paths of the bridge coordinate
/// `dY = (log h)'(t, Y) dt + dW` from `Y_0 = Y(0, X_0)`, reported through
/// the stretching map as `X_t = X(t, Y_t)`. Uses the same random streams
/// as [`simulate_direct`].
pub fn simulate_stretched(sol: &SbbSolution, sim: &SimConfig) -> Result<PathEnsemble> {
    let rec = check_inputs(sol, sim)?;
    let (lo, hi) = bounds(sol, sim)?;
    let table = drift_table(sol, sim)?;
    let x0 = initial_states(sol, sim)?;
    let t_end = sol.config.horizon_t;
    let dt = t_end / sim.n_steps as f64;
    let sq = dt.sqrt();
    let m = rec.len();
    let y0_map = &sol.maps_y[0];
    let outs = map_range(sim.execution, sim.n_paths, |p| {
        let mut rng = rng_for(sim.seed, p);
        initial_uniform(&mut rng);
        let mut y = y0_map.eval(x0[p]);
        let mut escaped = reflect(&mut y, lo, hi);
        let mut states = Vec::with_capacity(m);
        let mut ys = Vec::with_capacity(m);
        let mut next = 0;
        for n in 0..=sim.n_steps {
            if next < m && rec[next] == n {
                ys.push(y);
                states.push(sol.maps_x[next].eval(y));
                next += 1;
            }
            if n == sim.n_steps {
                break;
            }
            let (a, _) = table.at(n as f64 * dt, y);
            let z: f64 = rng.sample(StandardNormal);
            y += a * dt + sq * z;
            escaped |= reflect(&mut y, lo, hi);
        }
        PathOut { states, y: ys, cost: 0.0, escaped }
    });
    let escapes = outs.iter().filter(|o| o.escaped).count();
    check_escapes(escapes, sim.n_paths)?;
    Ok(PathEnsemble {
        n_paths: sim.n_paths,
        times: sol.times().to_vec(),
        states: outs.iter().flat_map(|o| o.states.iter().copied()).collect(),
        y_states: Some(outs.iter().flat_map(|o| o.y.iter().copied()).collect()),
        running_cost: None,
        seed: sim.seed,
        scheme: Scheme::Stretched,
        escapes,
    })
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    /// True when `x` lies within `k` standard errors of the estimate.
    pub fn agrees_with(&self, x: f64, k: f64) -> bool {
        (self.value - x).abs() <= k * self.std_error
    }
}

/// Path average of `∫ (alpha^2 + beta (sigma - 1)^2) / 2 dt`, accumulated by
/// the left-point rule during a direct simulation.
pub fn primal_cost(paths: &PathEnsemble, _sol: &SbbSolution) -> Result<Estimate> {
    let cost = match (&paths.scheme, &paths.running_cost) {
        (Scheme::Direct, Some(c)) => c,
        (scheme, _) => {
            return Err(SbbError::SchemeMismatch {
                expected: "direct",
                got: scheme.as_str(),
            })
        }
    };
    let (mean, var) = mean_var(cost);
    Ok(Estimate {
        value: mean,
        std_error: (var / cost.len() as f64).sqrt(),
    })
}

/// Conditional-increment test of the martingale property of
/// `M_t = alpha(t, X_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleDefect {
    /// Mass-weighted RMS over bins of `E[M_t - M_s | X_s in bin]`, for the
    /// pair of output times where it is largest relative to its noise floor.
    pub defect: f64,
    /// RMS over bins of the bin-mean standard errors for that pair.
    pub std_error: f64,
    pub s: f64,
    pub t: f64,
}

impl MartingaleDefect {
    pub const BINS: usize = 10;

    /// Defects below this are rounding noise of a drift that vanishes
    /// identically.
    pub const ROUNDOFF: f64 = 1e-12;

    /// Defect within three standard errors, or at rounding level.
    pub fn passes(&self) -> bool {
        self.defect <= 3.0 * self.std_error || self.defect < Self::ROUNDOFF
    }
}

pub fn martingale_defect(paths: &PathEnsemble, sol: &SbbSolution) -> Result<MartingaleDefect> {
    if paths.scheme != Scheme::Direct {
        return Err(SbbError::SchemeMismatch {
            expected: "direct",
            got: "stretched",
        });
    }
    let g = *sol.grid();
    let m = paths.times.len();
    let mut alpha = Vec::with_capacity(m);
    for (k, &t) in paths.times.iter().enumerate() {
        let c = sol.coefficients_at(t)?;
        alpha.push(paths.slice(k).iter().map(|&x| g.interp_clamped(&c.alpha, x)).collect::<Vec<f64>>());
    }
    let mut worst = MartingaleDefect { defect: 0.0, std_error: 0.0, s: 0.0, t: 0.0 };
    let mut worst_ratio = -1.0;
    for ks in 0..m {
        let xs = paths.slice(ks);
        let mut order: Vec<usize> = (0..paths.n_paths).collect();
        order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        for kt in ks + 1..m {
            let mut sq_mean = 0.0;
            let mut sq_se = 0.0;
            for b in 0..MartingaleDefect::BINS {
                let lo = b * paths.n_paths / MartingaleDefect::BINS;
                let hi = (b + 1) * paths.n_paths / MartingaleDefect::BINS;
                let d: Vec<f64> = order[lo..hi].iter().map(|&p| alpha[kt][p] - alpha[ks][p]).collect();
                let (mean, var) = mean_var(&d);
                let w = d.len() as f64 / paths.n_paths as f64;
                sq_mean += w * mean * mean;
                sq_se += w * var / d.len() as f64;
            }
            let (defect, se) = (sq_mean.sqrt(), sq_se.sqrt());
            let ratio = if se > 0.0 { defect / se } else if defect > 0.0 { f64::INFINITY } else { 0.0 };
            if ratio > worst_ratio {
                worst_ratio = ratio;
                worst = MartingaleDefect { defect, std_error: se, s: paths.times[ks], t: paths.times[kt] };
            }
        }
    }
    Ok(worst)
}

/// Terminal statistics of the bridge coordinate after reweighting each
/// stretched path by `1 / h(T, Y_T)`, against Brownian motion from `ν_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodCheck {
    pub mean: Estimate,
    pub var: Estimate,
    pub expected_mean: f64,
    pub expected_var: f64,
}

impl LikelihoodCheck {
    pub fn passes(&self) -> bool {
        self.mean.agrees_with(self.expected_mean, 3.0) && self.var.agrees_with(self.expected_var, 3.0)
    }
}

pub fn likelihood_check(paths: &PathEnsemble, sol: &SbbSolution) -> Result<LikelihoodCheck> {
    let k = paths.times.len() - 1;
    let y = paths.y_slice(k).ok_or(SbbError::SchemeMismatch {
        expected: "stretched",
        got: "direct",
    })?;
    let g = *sol.grid();
    let l_end = sol.potential.terminal();
    let logw: Vec<f64> = y.iter().map(|&v| -g.interp_clamped(l_end, v)).collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|v| v / total).collect();
    let mean = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>();
    let var = w.iter().zip(&y).map(|(w, y)| w * (y - mean) * (y - mean)).sum::<f64>();
    // Delta-method standard errors of self-normalised importance estimates.
    let se_mean = w.iter().zip(&y).map(|(w, y)| w * w * (y - mean) * (y - mean)).sum::<f64>().sqrt();
    let se_var = w
        .iter()
        .zip(&y)
        .map(|(w, y)| {
            let d = (y - mean) * (y - mean) - var;
            w * w * d * d
        })
        .sum::<f64>()
        .sqrt();
    Ok(LikelihoodCheck {
        mean: Estimate { value: mean, std_error: se_mean },
        var: Estimate { value: var, std_error: se_var },
        expected_mean: sol.nu0.mean(),
        expected_var: sol.nu0.variance() + sol.config.horizon_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_stays_inside() {
        let mut x = 10.5;
        assert!(reflect(&mut x, -10.0, 10.0));
        assert!((x - 9.5).abs() < 1e-12);
        let mut x = -31.0;
        reflect(&mut x, -10.0, 10.0);
        assert!((-10.0..=10.0).contains(&x));
        let mut x = 3.0;
        assert!(!reflect(&mut x, -10.0, 10.0));
    }

    #[test]
    fn streams_are_independent_of_order() {
        let a: Vec<f64> = (0..4).map(|p| rng_for(7, p).sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..4).rev().map(|p| rng_for(7, p).sample(StandardNormal)).collect();
        let b: Vec<f64> = b.into_iter().rev().collect();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn sim_config_limits() {
        assert!(SimConfig::new(10_000, 200, 1).validate().is_ok());
        assert!(matches!(
            SimConfig::new(10, 200, 1).validate(),
            Err(SbbError::InvalidConfig { field: "n_paths", .. })
        ));
        assert!(matches!(
            SimConfig::new(10_000, 10, 1).validate(),
            Err(SbbError::InvalidConfig { field: "n_steps", .. })
        ));
    }

    #[test]
    fn sorted_quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(sorted_quantile(&s, 0.5), 2.0);
        assert_eq!(sorted_quantile(&s, 0.125), 0.5);
    }
}
