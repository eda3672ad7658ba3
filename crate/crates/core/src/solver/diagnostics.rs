//! Residual checks on a finished solve.

use serde::{Deserialize, Serialize};

use crate::convex::derivative;
use crate::error::{Result, SbbError};
use crate::heat::{propagate_backward_log_with, propagate_forward_with};
use crate::maps::{hermite, second_derivative, stretch_values};
use crate::measure::Measure1D;

use super::config::Mode;
use super::solution::SbbSolution;
use super::solve::median;

/// Interval `[q(a), q(1 - a)]` holding the central `mass` of `m`.
pub fn central_region(m: &Measure1D, mass: f64) -> Result<(f64, f64)> {
    let a = 0.5 * (1.0 - mass);
    Ok((m.quantile(a)?, m.quantile(1.0 - a)?))
}

fn nodes_in(m: &Measure1D, region: (f64, f64)) -> Vec<usize> {
    let g = m.grid();
    (0..g.len())
        .filter(|&i| {
            let x = g.node(i);
            x >= region.0 && x <= region.1
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaResidual {
    /// Pointwise log-residual on the bridge grid (median-centred over the
    /// evaluation region).
    pub values: Vec<f64>,
    /// Sup over the central 80% mass region of the terminal bridge law.
    pub sup: f64,
}

/// Log-residual of the terminal Monge–Ampère equation
/// `log X'(y) - log(ν_T(y) / mu_T(X(y))) - log h(T, y) - c`, with `c` chosen
/// so that the median over the central 80% mass region is zero.
pub fn ma_residual(sol: &SbbSolution) -> Result<MaResidual> {
    let g = *sol.grid();
    let k = sol.times().len() - 1;
    let floor = sol.config.density_floor;
    let w = &sol.stretch[k];
    let l = sol.potential.terminal();
    let x = stretch_values(w, g, 1.0);
    let xp: Vec<f64> = second_derivative(w, g.dx()).iter().map(|c| 1.0 + c).collect();
    let nu_t = sol.nu_at(sol.config.horizon_t)?;
    let log_mu: Vec<f64> = sol.mu_t.density().iter().map(|d| d.max(floor).ln()).collect();

    let mut values: Vec<f64> = (0..g.len())
        .map(|i| {
            xp[i].max(f64::MIN_POSITIVE).ln() - nu_t.density()[i].max(floor).ln()
                + g.interp(&log_mu, x[i])
                - l[i]
        })
        .collect();
    let region = central_region(&sol.y_laws[k], 0.8)?;
    let idx = nodes_in(&sol.y_laws[k], region);
    if idx.is_empty() {
        return Err(SbbError::Unsupported("empty evaluation region".into()));
    }
    let inner: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
    let c = median(&inner);
    values.iter_mut().for_each(|v| *v -= c);
    let sup = idx.iter().fold(0.0_f64, |m, &i| m.max(values[i].abs()));
    Ok(MaResidual { values, sup })
}

/// Mass fraction of the state law over which [`hjb_residual`] is evaluated.
pub const HJB_REGION_MASS: f64 = 0.8;

/// Sup-norm residual of the dual Hamilton–Jacobi–Bellman equation
/// `v_t + v_x^2 / 2 + v_xx / (2 (1 - v_xx / beta)) = 0` at a stored time,
/// with `v(x) = log h(Y(x)) + beta/2 (x - Y(x))^2`, over the central
/// [`HJB_REGION_MASS`] of the state law. In the Schrödinger limit the
/// equation is `l_t + l'^2/2 + l''/2 = 0` for `l = log h`.
pub fn hjb_residual(sol: &SbbSolution, t: f64) -> Result<f64> {
    if sol.mode() == Mode::BassLimit {
        return Err(SbbError::Unsupported(
            "the potential is constant in the Bass limit; there is no finite-beta value function".into(),
        ));
    }
    let k = sol
        .time_index(t)
        .map_err(|_| SbbError::InsufficientTimes(format!("time {t} is not an output time")))?;
    let g = *sol.grid();
    let t_end = sol.config.horizon_t;
    let exec = sol.config.execution;
    let mode = sol.potential.boundary();
    let l_end = sol.potential.terminal();
    let delta = 1e-3 * t_end;
    let at = |s: f64| propagate_backward_log_with(l_end, g, t_end - s, mode, exec);
    let dt_l: Vec<f64> = if t + delta <= t_end {
        let (a, b) = (at(t + delta)?, at(t - delta)?);
        a.iter().zip(&b).map(|(p, m)| (p - m) / (2.0 * delta)).collect()
    } else {
        let (a, b, c) = (at(t)?, at(t - delta)?, at(t - 2.0 * delta)?);
        (0..g.len())
            .map(|i| (3.0 * a[i] - 4.0 * b[i] + c[i]) / (2.0 * delta))
            .collect()
    };
    let l = &sol.potential.rows()[k];
    let region = central_region(&sol.marginals[k], HJB_REGION_MASS)?;
    let idx = nodes_in(&sol.marginals[k], region);
    let mut sup = 0.0_f64;
    match sol.mode() {
        Mode::SchrodingerLimit => {
            let d1 = derivative(l, g.dx());
            let d2 = second_derivative(l, g.dx());
            for &i in &idx {
                let r = dt_l[i] + 0.5 * d1[i] * d1[i] + 0.5 * d2[i];
                sup = sup.max(r.abs());
            }
        }
        _ => {
            // v_x = beta (x - Y) from the map; v_xx = beta (1 - 1 / X'(Y)) by
            // the inverse-function rule, which stays second-order accurate
            // where differencing the tabulated Y would not.
            let beta = sol.beta();
            let y = sol.maps_y[k].values();
            let xp: Vec<f64> = second_derivative(l, g.dx()).iter().map(|c| 1.0 + c / beta).collect();
            for &i in &idx {
                let vt = g.interp(&dt_l, y[i]);
                let vx = beta * (g.node(i) - y[i]);
                let vxx = beta * (1.0 - 1.0 / g.interp_clamped(&xp, y[i]));
                let r = vt + 0.5 * vx * vx + 0.5 * vxx / (1.0 - vxx / beta);
                sup = sup.max(r.abs());
            }
        }
    }
    Ok(sup)
}

/// Expected running cost `E ∫ (alpha^2 + beta (sigma - 1)^2) / 2 dt`
/// evaluated on the bridge coordinate, where it reads
/// `E_{pi_t}[(l'^2 + l''^2 / beta) / 2]`, integrated in time by Simpson's
/// rule on `intervals` (rounded up to even) steps. In the Bass limit the
/// volatility penalty alone is reported, `E_{ν_t}[(X'(t, y) - 1)^2] / 2`.
pub fn field_cost(sol: &SbbSolution, intervals: usize) -> Result<f64> {
    let g = *sol.grid();
    let t_end = sol.config.horizon_t;
    let exec = sol.config.execution;
    let floor = sol.config.density_floor;
    let m = intervals.max(2).div_ceil(2) * 2;
    let l_end = sol.potential.terminal();
    let mut total = 0.0;
    for j in 0..=m {
        let t = t_end * j as f64 / m as f64;
        let integrand = match sol.mode() {
            Mode::BassLimit => {
                let w = stretch_at(sol, t)?;
                let xp: Vec<f64> = second_derivative(&w, g.dx()).iter().map(|c| 1.0 + c).collect();
                let nu = propagate_forward_with(&sol.nu0, t, exec)?;
                0.5 * nu.expect(&xp.iter().map(|s| (s - 1.0) * (s - 1.0)).collect::<Vec<_>>())
            }
            mode => {
                let l = propagate_backward_log_with(l_end, g, t_end - t, sol.potential.boundary(), exec)?;
                let nu = propagate_forward_with(&sol.nu0, t, exec)?;
                let log_pi: Vec<f64> = l.iter().zip(nu.density()).map(|(l, d)| l + d.max(floor).ln()).collect();
                let pi = Measure1D::from_log_density(g, &log_pi)?;
                let d1 = derivative(&l, g.dx());
                let d2 = second_derivative(&l, g.dx());
                let vol = if mode == Mode::Sbb { 1.0 / sol.beta() } else { 0.0 };
                let f: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| 0.5 * (a * a + vol * b * b)).collect();
                pi.expect(&f)
            }
        };
        let wgt = if j == 0 || j == m {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        total += wgt * integrand;
    }
    Ok(total * t_end / (3.0 * m as f64))
}

fn stretch_at(sol: &SbbSolution, t: f64) -> Result<Vec<f64>> {
    let k = sol.times().len() - 1;
    crate::heat::propagate_backward_linear(&sol.stretch[k], *sol.grid(), sol.config.horizon_t - t, sol.config.execution)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityGap {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

/// Primal cost (field quadrature) minus the dual value
/// `E_{mu_T}[v(T, .)] - E_{mu_0}[v(0, .)]`.
pub fn primal_dual_gap(sol: &SbbSolution, mu0: &Measure1D, mu_t: &Measure1D) -> Result<DualityGap> {
    if sol.mode() == Mode::BassLimit {
        return Err(SbbError::Unsupported(
            "the dual value function degenerates in the Bass limit".into(),
        ));
    }
    if mu0.grid() != sol.grid() || mu_t.grid() != sol.grid() {
        return Err(SbbError::GridMismatch);
    }
    let primal = field_cost(sol, 32)?;
    let k_end = sol.times().len() - 1;
    let dual = value_expectation(sol, k_end, mu_t) - value_expectation(sol, 0, mu0);
    Ok(DualityGap {
        primal,
        dual,
        gap: primal - dual,
    })
}

/// `E_m[v(t_k, .)]` with `v(x) = min_y { l(y) + beta/2 (x - y)^2 }`.
fn value_expectation(sol: &SbbSolution, k: usize, m: &Measure1D) -> f64 {
    let g = *sol.grid();
    let l = &sol.potential.rows()[k];
    match sol.mode() {
        Mode::Sbb => {
            let beta = sol.beta();
            let d1 = derivative(l, g.dx());
            let y = sol.maps_y[k].values();
            let v: Vec<f64> = (0..g.len())
                .map(|i| {
                    let x = g.node(i);
                    hermite(&g, l, &d1, y[i]) + 0.5 * beta * (x - y[i]) * (x - y[i])
                })
                .collect();
            m.expect(&v)
        }
        _ => m.expect(l),
    }
}
