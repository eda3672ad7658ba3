use log::warn;
use serde::{Deserialize, Serialize};

use crate::convex::MonotoneMap;
use crate::error::{Result, SbbError};
use crate::grid::Grid1D;
use crate::heat::{propagate_backward_linear, propagate_backward_log_with, propagate_forward_with, LogHeatPotential};
use crate::maps::{invert_extrapolated, second_derivative, stretch_values, ProcessCoefficients};
use crate::measure::{pushforward_onto, Measure1D};

use super::config::{Mode, SolverConfig};

/// One sweep of the outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// W2 gap in the initial boundary condition.
    pub w2_t0: f64,
    /// W2 gap in the terminal boundary condition.
    pub w2_t: f64,
    /// Sup-norm change of `log h(T, .)` made by this sweep.
    pub dlogh_sup: f64,
    /// Smallest `1 + (log h)'' / beta` over the grid at times 0 and T.
    pub sigma_min: f64,
}

impl TraceRecord {
    pub fn sigma_positive(&self) -> bool {
        self.sigma_min > 0.0
    }
}

/// Everything a solve produces. Per-time vectors follow
/// `config.output_times`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbbSolution {
    pub config: SolverConfig,
    pub mu0: Measure1D,
    pub mu_t: Measure1D,
    /// `log h` at the output times.
    pub potential: LogHeatPotential,
    /// Stretch `w` at the output times, with `X(y) = y + w'(y)`.
    pub stretch: Vec<Vec<f64>>,
    pub nu0: Measure1D,
    pub maps_x: Vec<MonotoneMap>,
    pub maps_y: Vec<MonotoneMap>,
    /// Law of the state `X_t`.
    pub marginals: Vec<Measure1D>,
    /// Law of the bridge coordinate `Y_t`, proportional to `h ν`.
    pub y_laws: Vec<Measure1D>,
    pub coefficients: Vec<ProcessCoefficients>,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
}

impl SbbSolution {
    pub fn grid(&self) -> &Grid1D {
        &self.config.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.config.output_times
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn beta(&self) -> f64 {
        self.config.beta
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.potential.time_index(t)
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    /// Final boundary defects `(t = 0, t = T)` from the trace.
    pub fn boundary_defects(&self) -> (f64, f64) {
        self.trace
            .last()
            .map_or((f64::INFINITY, f64::INFINITY), |r| (r.w2_t0, r.w2_t))
    }

    /// `sup |X(t, Y(t, x)) - x|` over the central two thirds of the grid,
    /// maximised over output times.
    pub fn inverse_map_defect(&self) -> f64 {
        let g = self.grid();
        let n = g.len();
        let mut sup = 0.0_f64;
        for (mx, my) in self.maps_x.iter().zip(&self.maps_y) {
            for i in n / 6..n - n / 6 {
                let x = g.node(i);
                sup = sup.max((mx.eval(my.values()[i]) - x).abs());
            }
        }
        sup
    }

    /// Smallest volatility over all output times.
    pub fn sigma_min(&self) -> f64 {
        self.coefficients
            .iter()
            .map(|c| c.sigma_min())
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest mass any stored bridge law puts on the outer
    /// [`EDGE_FRACTION`] of the grid at either end. Values above
    /// [`EDGE_MASS_TOL`] mean the bridge coordinate is cut off by the domain.
    pub fn bridge_edge_mass(&self) -> f64 {
        self.y_laws.iter().map(edge_mass).fold(0.0, f64::max)
    }

    /// Initial law of the bridge coordinate propagated to time `t`.
    pub fn nu_at(&self, t: f64) -> Result<Measure1D> {
        propagate_forward_with(&self.nu0, t, self.config.execution)
    }

    /// `log h` and the stretch at any `t` in `[0, T]`, propagated from the
    /// terminal rows.
    pub fn fields_at(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = *self.grid();
        let t_end = self.config.horizon_t;
        if !(0.0..=t_end).contains(&t) {
            return Err(SbbError::OutOfRange { what: "time outside [0, T]", value: t });
        }
        let exec = self.config.execution;
        let k = self.times().len() - 1;
        match self.mode() {
            Mode::BassLimit => Ok((
                vec![0.0; g.len()],
                propagate_backward_linear(&self.stretch[k], g, t_end - t, exec)?,
            )),
            mode => {
                let l = propagate_backward_log_with(self.potential.terminal(), g, t_end - t, self.potential.boundary(), exec)?;
                let w = if mode == Mode::Sbb {
                    l.iter().map(|v| v / self.beta()).collect()
                } else {
                    vec![0.0; g.len()]
                };
                Ok((l, w))
            }
        }
    }

    /// Drift and volatility on the state grid at any `t` in `[0, T]`.
    pub fn coefficients_at(&self, t: f64) -> Result<ProcessCoefficients> {
        let g = *self.grid();
        let (l, w) = self.fields_at(t)?;
        let x = MonotoneMap::new(g, stretch_values(&w, g, 1.0)).map_err(|e| match e {
            SbbError::NonMonotoneMap { indices } => SbbError::MonotonicityViolation { indices },
            other => other,
        })?;
        let y = invert_extrapolated(&x, g);
        field_coefficients(&self.config, &l, &w, &y, t)
    }

    /// A copy with `f(y)` added to every stored `log h` row, the stretch and
    /// all derived fields recomputed. Used to probe the diagnostics.
    pub fn perturbed(&self, f: impl Fn(f64) -> f64) -> Result<SbbSolution> {
        self.perturbed_rows(f, |_| true)
    }

    /// As [`SbbSolution::perturbed`], touching only the row stored for time `t`.
    pub fn perturbed_at(&self, t: f64, f: impl Fn(f64) -> f64) -> Result<SbbSolution> {
        let k = self.time_index(t)?;
        self.perturbed_rows(f, |j| j == k)
    }

    fn perturbed_rows(&self, f: impl Fn(f64) -> f64, touch: impl Fn(usize) -> bool) -> Result<SbbSolution> {
        let g = *self.grid();
        let bump: Vec<f64> = g.nodes().into_iter().map(f).collect();
        let mut pot = self.potential.clone();
        for k in (0..pot.times().len()).filter(|&k| touch(k)) {
            pot.row_mut(k).iter_mut().zip(&bump).for_each(|(l, b)| *l += b);
        }
        let stretch = match self.mode() {
            Mode::Sbb => pot.rows().iter().map(|r| r.iter().map(|l| l / self.beta()).collect()).collect(),
            _ => self.stretch.clone(),
        };
        assemble(
            self.config.clone(),
            self.mu0.clone(),
            self.mu_t.clone(),
            pot,
            stretch,
            self.nu0.clone(),
            self.trace.clone(),
            self.converged,
        )
    }
}

/// Share of the grid, per side, counted as its edge.
pub const EDGE_FRACTION: f64 = 0.02;
/// Edge mass above which a solve warns that the domain is too narrow.
pub const EDGE_MASS_TOL: f64 = 1e-6;

fn edge_mass(m: &Measure1D) -> f64 {
    let d = m.density();
    let k = ((EDGE_FRACTION * d.len() as f64).ceil() as usize).max(1);
    let dx = m.grid().dx();
    let left: f64 = d[..k].iter().sum::<f64>() * dx;
    let right: f64 = d[d.len() - k..].iter().sum::<f64>() * dx;
    left.max(right)
}

/// Build maps, marginals and coefficients at every output time.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    config: SolverConfig,
    mu0: Measure1D,
    mu_t: Measure1D,
    potential: LogHeatPotential,
    stretch: Vec<Vec<f64>>,
    nu0: Measure1D,
    trace: Vec<TraceRecord>,
    converged: bool,
) -> Result<SbbSolution> {
    let g = config.grid;
    let exec = config.execution;
    let floor = config.density_floor;
    let mut maps_x = Vec::new();
    let mut maps_y = Vec::new();
    let mut marginals = Vec::new();
    let mut y_laws = Vec::new();
    let mut coefficients = Vec::new();
    for (k, &t) in config.output_times.iter().enumerate() {
        let l = &potential.rows()[k];
        let x = MonotoneMap::new(g, stretch_values(&stretch[k], g, 1.0)).map_err(|e| match e {
            SbbError::NonMonotoneMap { indices } => SbbError::MonotonicityViolation { indices },
            other => other,
        })?;
        let y = invert_extrapolated(&x, g);
        let nu = propagate_forward_with(&nu0, t, exec)?;
        let log_pi: Vec<f64> = l
            .iter()
            .zip(nu.density())
            .map(|(l, n)| l + n.max(floor).ln())
            .collect();
        let pi = Measure1D::from_log_density(g, &log_pi)?;
        let mu = pushforward_onto(&pi, &x, g)?;
        let co = field_coefficients(&config, l, &stretch[k], &y, t)?;
        maps_x.push(x);
        maps_y.push(y);
        marginals.push(mu);
        y_laws.push(pi);
        coefficients.push(co);
    }
    let edge = y_laws.iter().map(edge_mass).fold(0.0, f64::max);
    if edge > EDGE_MASS_TOL {
        warn!("bridge law puts mass {edge:.2e} near the grid edge; widen the grid");
    }
    Ok(SbbSolution {
        config,
        mu0,
        mu_t,
        potential,
        stretch,
        nu0,
        maps_x,
        maps_y,
        marginals,
        y_laws,
        coefficients,
        trace,
        converged,
    })
}

/// Drift and volatility at the state nodes, for each mode.
fn field_coefficients(
    config: &SolverConfig,
    log_h: &[f64],
    stretch: &[f64],
    y: &MonotoneMap,
    time: f64,
) -> Result<ProcessCoefficients> {
    let g = config.grid;
    match config.mode {
        Mode::Sbb => crate::maps::coefficients(log_h, g, config.beta, time),
        Mode::SchrodingerLimit => {
            let d1 = crate::convex::derivative(log_h, g.dx());
            Ok(ProcessCoefficients {
                grid: g,
                time,
                alpha: d1,
                sigma: vec![1.0; g.len()],
            })
        }
        Mode::BassLimit => {
            let xp: Vec<f64> = second_derivative(stretch, g.dx()).iter().map(|c| 1.0 + c).collect();
            let mut sigma = Vec::with_capacity(g.len());
            for (i, &yi) in y.values().iter().enumerate() {
                let s = g.interp_clamped(&xp, yi);
                if !(s > 0.0) {
                    return Err(SbbError::NonPositiveSigma { index: i, sigma: s });
                }
                sigma.push(s);
            }
            Ok(ProcessCoefficients {
                grid: g,
                time,
                alpha: vec![0.0; g.len()],
                sigma,
            })
        }
    }
}

/// Stretch at every output time obtained by heat-smoothing the terminal
/// stretch (the Bass structure, where the convex potential itself is
/// space-time harmonic).
pub(crate) fn harmonic_stretch(config: &SolverConfig, w_t: &[f64]) -> Result<Vec<Vec<f64>>> {
    let t_end = config.horizon_t;
    config
        .output_times
        .iter()
        .map(|&t| propagate_backward_linear(w_t, config.grid, t_end - t, config.execution))
        .collect()
}
