use log::{debug, info};

use crate::convex::{isotonic_repair, MonotoneMap, STRICT_GAP};
use crate::error::{Result, SbbError};
use crate::heat::{propagate_backward_linear, propagate_backward_log_with, propagate_forward_with, BoundaryMode, LogHeatPotential};
use crate::maps::{second_derivative, stretch_values, x_map};
use crate::measure::{make_gaussian, pushforward_inverse, wasserstein2, Measure1D};

use super::config::{Mode, Nu0Policy, SolverConfig};
use super::solution::{assemble, harmonic_stretch, SbbSolution, TraceRecord};
use super::terminal::solve_terminal;

/// Quantile levels used for every boundary W2 defect.
pub(crate) const DEFECT_QUANTILES: usize = 1000;

/// Solve in the mode selected by `config.mode`.
pub fn solve(mu0: &Measure1D, mu_t: &Measure1D, config: &SolverConfig) -> Result<SbbSolution> {
    config.validate()?;
    if *mu0.grid() != config.grid || *mu_t.grid() != config.grid {
        return Err(SbbError::GridMismatch);
    }
    match config.mode {
        Mode::Sbb => run_sbb(mu0, mu_t, config),
        Mode::SchrodingerLimit => run_schrodinger(mu0, mu_t, config),
        Mode::BassLimit => run_bass(mu0, mu_t, config),
    }
}

/// Classical Schrödinger bridge between `mu0` and `mu_t`.
pub fn solve_schrodinger(mu0: &Measure1D, mu_t: &Measure1D, config: &SolverConfig) -> Result<SbbSolution> {
    solve(mu0, mu_t, &config.clone().with_mode(Mode::SchrodingerLimit))
}

/// Bass martingale between `mu0` and `mu_t`; requires convex order.
pub fn solve_bass(mu0: &Measure1D, mu_t: &Measure1D, config: &SolverConfig) -> Result<SbbSolution> {
    solve(mu0, mu_t, &config.clone().with_mode(Mode::BassLimit))
}

fn initial_nu0(config: &SolverConfig, mu0: &Measure1D) -> Result<Measure1D> {
    match &config.nu0_policy {
        Nu0Policy::MatchMu0 => Ok(mu0.clone()),
        Nu0Policy::StandardGaussian => make_gaussian(config.grid, 0.0, 1.0),
        Nu0Policy::Custom(m) => Ok(m.clone()),
    }
}

fn log_floored(m: &Measure1D, floor: f64) -> Vec<f64> {
    m.density().iter().map(|d| d.max(floor).ln()).collect()
}

/// `log m` with the floored far tails replaced by a linear continuation of
/// the last resolved values, so the terminal equation never sees the flat
/// plateau of the floor.
fn log_tail_extended(m: &Measure1D, floor: f64) -> Vec<f64> {
    let mut out = log_floored(m, floor);
    let d = m.density();
    let n = out.len();
    let (Some(lo), Some(hi)) = (d.iter().position(|&v| v > floor), d.iter().rposition(|&v| v > floor)) else {
        return out;
    };
    if hi < lo + 2 * TAIL_SLOPE_SPAN {
        return out;
    }
    let span = TAIL_SLOPE_SPAN as f64;
    let left = ((out[lo + TAIL_SLOPE_SPAN] - out[lo]) / span).max(0.0);
    let right = ((out[hi] - out[hi - TAIL_SLOPE_SPAN]) / span).min(0.0);
    for i in 0..lo {
        out[i] = out[lo] - left * (lo - i) as f64;
    }
    for i in hi + 1..n {
        out[i] = out[hi] + right * (i - hi) as f64;
    }
    out
}

/// Normalised `exp(l) * m`.
fn tilt(l: &[f64], m: &Measure1D, floor: f64) -> Result<Measure1D> {
    let log: Vec<f64> = l.iter().zip(m.density()).map(|(l, d)| l + d.max(floor).ln()).collect();
    Measure1D::from_log_density(*m.grid(), &log)
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

fn monotone(values: Vec<f64>, config: &SolverConfig) -> Result<MonotoneMap> {
    MonotoneMap::new(config.grid, values).map_err(|e| match e {
        SbbError::NonMonotoneMap { indices } => SbbError::MonotonicityViolation { indices },
        other => other,
    })
}

fn min_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(f64::INFINITY, f64::min)
}

fn run_sbb(mu0: &Measure1D, mu_t: &Measure1D, config: &SolverConfig) -> Result<SbbSolution> {
    let g = config.grid;
    let beta = config.beta;
    let t_end = config.horizon_t;
    let exec = config.execution;
    let floor = config.density_floor;
    let log_mu_t = log_tail_extended(mu_t, floor);

    let mut nu0 = initial_nu0(config, mu0)?;
    let mut w = vec![0.0; g.len()];
    let mut l_t = vec![0.0; g.len()];
    let mut trace = Vec::new();
    let mut converged = false;

    for it in 0..config.max_iters {
        let nu_t = propagate_forward_with(&nu0, t_end, exec)?;
        let log_nu_t = log_tail_extended(&nu_t, floor);
        if it == 0 {
            // Newton from w = 0 can stall when the two laws differ strongly
            // in scale; the monotone rearrangement is a much closer start.
            w = stretch_from_map(&g, &rearrangement(&nu_t, mu_t)?);
        }
        let (w_new, resid) = solve_terminal(&g, &w, &log_mu_t, &log_nu_t, beta)?;
        let d = config.damping;
        w = w.iter().zip(&w_new).map(|(a, b)| (1.0 - d) * a + d * b).collect();
        let shift = median(&w);
        w.iter_mut().for_each(|v| *v -= shift);
        let l_new: Vec<f64> = w.iter().map(|v| beta * v).collect();
        let dlogh = sup_diff(&l_new, &l_t);
        l_t = l_new;

        let l_0 = propagate_backward_log_with(&l_t, g, t_end, BoundaryMode::Extrapolate, exec)?;
        let x0 = x_map(&l_0, g, beta)?;
        let x_t = monotone(stretch_values(&w, g, 1.0), config)?;
        let rho0 = pushforward_inverse(mu0, &x0)?;
        let rho_t = pushforward_inverse(mu_t, &x_t)?;
        let d0 = wasserstein2(&rho0, &tilt(&l_0, &nu0, floor)?, DEFECT_QUANTILES)?;
        let d_t = wasserstein2(&rho_t, &tilt(&l_t, &nu_t, floor)?, DEFECT_QUANTILES)?;
        let sigma_min = min_of(
            second_derivative(&l_0, g.dx())
                .into_iter()
                .chain(second_derivative(&l_t, g.dx()))
                .map(|c| 1.0 + c / beta),
        );
        debug!("sbb sweep {it}: w2_0 {d0:.3e} w2_T {d_t:.3e} dlogh {dlogh:.3e} newton {resid:.1e}");
        trace.push(TraceRecord {
            iter: it,
            w2_t0: d0,
            w2_t: d_t,
            dlogh_sup: dlogh,
            sigma_min,
        });
        if d0.max(d_t) < config.tol_marginal {
            converged = true;
            break;
        }
        if it > 0 && dlogh < config.stall_tol {
            break;
        }
        if it + 1 < config.max_iters {
            let log_rho: Vec<f64> = log_floored(&rho0, floor)
                .iter()
                .zip(&l_0)
                .map(|(r, l)| r - l)
                .collect();
            nu0 = Measure1D::from_log_density(g, &log_rho)?;
        }
    }
    report(config, &trace, converged);

    let potential = LogHeatPotential::from_terminal(g, config.output_times.clone(), l_t, BoundaryMode::Extrapolate, exec)?;
    let stretch = potential
        .rows()
        .iter()
        .map(|r| r.iter().map(|l| l / beta).collect())
        .collect();
    assemble(config.clone(), mu0.clone(), mu_t.clone(), potential, stretch, nu0, trace, converged)
}

fn run_schrodinger(mu0: &Measure1D, mu_t: &Measure1D, config: &SolverConfig) -> Result<SbbSolution> {
    let g = config.grid;
    let t_end = config.horizon_t;
    let exec = config.execution;
    let floor = config.density_floor;
    let log_mu0 = log_floored(mu0, floor);
    let log_mu_t = log_floored(mu_t, floor);

    let mut nu0 = initial_nu0(config, mu0)?;
    let mut l_t = vec![0.0; g.len()];
    let mut trace = Vec::new();
    let mut converged = false;

    for it in 0..config.max_iters {
        let nu_t = propagate_forward_with(&nu0, t_end, exec)?;
        let d = config.damping;
        let mut l_new: Vec<f64> = log_mu_t
            .iter()
            .zip(log_floored(&nu_t, floor))
            .zip(&l_t)
            .map(|((m, n), old)| (1.0 - d) * old + d * (m - n))
            .collect();
        let shift = median(&l_new);
        l_new.iter_mut().for_each(|v| *v -= shift);
        let dlogh = sup_diff(&l_new, &l_t);
        l_t = l_new;

        let l_0 = propagate_backward_log_with(&l_t, g, t_end, BoundaryMode::Extrapolate, exec)?;
        let d0 = wasserstein2(mu0, &tilt(&l_0, &nu0, floor)?, DEFECT_QUANTILES)?;
        let d_t = wasserstein2(mu_t, &tilt(&l_t, &nu_t, floor)?, DEFECT_QUANTILES)?;
        debug!("schrodinger sweep {it}: w2_0 {d0:.3e} w2_T {d_t:.3e} dlogh {dlogh:.3e}");
        trace.push(TraceRecord {
            iter: it,
            w2_t0: d0,
            w2_t: d_t,
            dlogh_sup: dlogh,
            sigma_min: 1.0,
        });
        if d0.max(d_t) < config.tol_marginal {
            converged = true;
            break;
        }
        if it > 0 && dlogh < config.stall_tol {
            break;
        }
        if it + 1 < config.max_iters {
            let log_nu: Vec<f64> = log_mu0.iter().zip(&l_0).map(|(m, l)| m - l).collect();
            nu0 = Measure1D::from_log_density(g, &log_nu)?;
        }
    }
    report(config, &trace, converged);

    let potential = LogHeatPotential::from_terminal(g, config.output_times.clone(), l_t, BoundaryMode::Extrapolate, exec)?;
    let stretch = vec![vec![0.0; g.len()]; config.output_times.len()];
    assemble(config.clone(), mu0.clone(), mu_t.clone(), potential, stretch, nu0, trace, converged)
}

/// Check `mu0 <=_c mu_t`: equal means within 1e-6 and
/// `E_{mu_t}(x - k)_+ >= E_{mu0}(x - k)_+` at every grid node `k`.
pub fn check_convex_order(mu0: &Measure1D, mu_t: &Measure1D) -> Result<()> {
    let (m0, m1) = (mu0.mean(), mu_t.mean());
    if (m0 - m1).abs() > 1e-6 {
        return Err(SbbError::ConvexOrderViolation(format!("means differ: {m0} vs {m1}")));
    }
    let g = *mu0.grid();
    for i in 0..g.len() {
        let k = g.node(i);
        let c0 = mu0.expect_fn(|x| (x - k).max(0.0));
        let c1 = mu_t.expect_fn(|x| (x - k).max(0.0));
        if c1 < c0 - 1e-9 {
            return Err(SbbError::ConvexOrderViolation(format!(
                "call price at strike {k}: {c1} < {c0}"
            )));
        }
    }
    Ok(())
}

/// Source CDF levels outside `[TAIL_LEVEL, 1 - TAIL_LEVEL]` carry too little
/// precision to place a quantile; the rearrangement is continued linearly
/// there.
const TAIL_LEVEL: f64 = 1e-9;

/// Nodes used for the slope of the linear tail continuation.
const TAIL_SLOPE_SPAN: usize = 8;

/// Increasing rearrangement `Q_target(F_source(y))` on the source grid,
/// continued linearly where the source CDF saturates, then made strictly
/// increasing.
fn rearrangement(source: &Measure1D, target: &Measure1D) -> Result<Vec<f64>> {
    let g = *source.grid();
    let cdf = source.cdf_nodes();
    let n = g.len();
    let lo = cdf.iter().position(|&u| u >= TAIL_LEVEL).unwrap_or(0);
    let hi = cdf.iter().rposition(|&u| u <= 1.0 - TAIL_LEVEL).unwrap_or(n - 1);
    if hi < lo + 2 * TAIL_SLOPE_SPAN {
        return Err(SbbError::InvalidMeasure(
            "source law too concentrated for a rearrangement on this grid".into(),
        ));
    }
    let mut out = vec![0.0; n];
    let levels: Vec<f64> = cdf[lo..=hi].to_vec();
    out[lo..=hi].copy_from_slice(&target.quantiles(&levels)?);
    isotonic_repair(&mut out[lo..=hi], STRICT_GAP);
    let span = TAIL_SLOPE_SPAN as f64 * g.dx();
    let left = (out[lo + TAIL_SLOPE_SPAN] - out[lo]) / span;
    let right = (out[hi] - out[hi - TAIL_SLOPE_SPAN]) / span;
    for i in 0..lo {
        out[i] = out[lo] - left * (g.node(lo) - g.node(i));
    }
    for i in hi + 1..n {
        out[i] = out[hi] + right * (g.node(i) - g.node(hi));
    }
    isotonic_repair(&mut out, STRICT_GAP);
    Ok(out)
}

/// Cumulative trapezoid of `x(y) - y`, so that `y + w'` reproduces `x`.
fn stretch_from_map(g: &crate::grid::Grid1D, x: &[f64]) -> Vec<f64> {
    let dx = g.dx();
    let mut w = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    w.push(0.0);
    for i in 1..x.len() {
        acc += 0.5 * dx * ((x[i - 1] - g.node(i - 1)) + (x[i] - g.node(i)));
        w.push(acc);
    }
    w
}

fn run_bass(mu0: &Measure1D, mu_t: &Measure1D, config: &SolverConfig) -> Result<SbbSolution> {
    check_convex_order(mu0, mu_t)?;
    let g = config.grid;
    let t_end = config.horizon_t;
    let exec = config.execution;

    let mut nu0 = initial_nu0(config, mu0)?;
    let mut w_t = vec![0.0; g.len()];
    let mut trace = Vec::new();
    let mut converged = false;

    for it in 0..config.max_iters {
        let nu_t = propagate_forward_with(&nu0, t_end, exec)?;
        let x_vals = rearrangement(&nu_t, mu_t)?;
        let mut w_new = stretch_from_map(&g, &x_vals);
        let d = config.damping;
        w_new.iter_mut().zip(&w_t).for_each(|(n, o)| *n = (1.0 - d) * o + d * *n);
        let shift = median(&w_new);
        w_new.iter_mut().for_each(|v| *v -= shift);
        let dstretch = sup_diff(&w_new, &w_t);
        w_t = w_new;

        let w_0 = propagate_backward_linear(&w_t, g, t_end, exec)?;
        let x0 = monotone(stretch_values(&w_0, g, 1.0), config)?;
        let x_t = monotone(stretch_values(&w_t, g, 1.0), config)?;
        let rho0 = pushforward_inverse(mu0, &x0)?;
        let rho_t = pushforward_inverse(mu_t, &x_t)?;
        let d0 = wasserstein2(&rho0, &nu0, DEFECT_QUANTILES)?;
        let d_t = wasserstein2(&rho_t, &nu_t, DEFECT_QUANTILES)?;
        let sigma_min = min_of(
            second_derivative(&w_0, g.dx())
                .into_iter()
                .chain(second_derivative(&w_t, g.dx()))
                .map(|c| 1.0 + c),
        );
        debug!("bass sweep {it}: w2_0 {d0:.3e} w2_T {d_t:.3e} dstretch {dstretch:.3e}");
        trace.push(TraceRecord {
            iter: it,
            w2_t0: d0,
            w2_t: d_t,
            dlogh_sup: dstretch,
            sigma_min,
        });
        if d0.max(d_t) < config.tol_marginal {
            converged = true;
            break;
        }
        if it > 0 && dstretch < config.stall_tol {
            break;
        }
        if it + 1 < config.max_iters {
            nu0 = rho0;
        }
    }
    report(config, &trace, converged);

    let zeros = vec![vec![0.0; g.len()]; config.output_times.len()];
    let potential = LogHeatPotential::new(g, config.output_times.clone(), zeros, BoundaryMode::Extrapolate)?;
    let stretch = harmonic_stretch(config, &w_t)?;
    assemble(config.clone(), mu0.clone(), mu_t.clone(), potential, stretch, nu0, trace, converged)
}

fn report(config: &SolverConfig, trace: &[TraceRecord], converged: bool) {
    let last = trace.last().expect("at least one sweep");
    info!(
        "{} solve (beta = {}): {} after {} sweeps, boundary W2 defects {:.3e} / {:.3e}",
        config.mode.as_str(),
        config.beta,
        if converged { "converged" } else { "not converged" },
        trace.len(),
        last.w2_t0,
        last.w2_t
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;
    use crate::measure::make_gaussian;

    fn grid() -> Grid1D {
        Grid1D::new(-10.0, 10.0, 401).unwrap()
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn trivial_pair_converges_at_once_in_every_mode() {
        let g = grid();
        let mu0 = make_gaussian(g, 0.0, 1.0).unwrap();
        let mu_t = make_gaussian(g, 0.0, 2.0).unwrap();
        for mode in [Mode::Sbb, Mode::SchrodingerLimit, Mode::BassLimit] {
            let cfg = SolverConfig::new(1.0, 1.0, g).with_mode(mode);
            let sol = solve(&mu0, &mu_t, &cfg).unwrap();
            assert!(sol.converged, "{mode:?}");
            assert!(sol.iterations() <= 3, "{mode:?}: {}", sol.iterations());
            let sup = sol.potential.terminal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(sup < 1e-4, "{mode:?}: {sup}");
        }
    }

    #[test]
    fn gaussian_sbb_converges() {
        let g = grid();
        let mu0 = make_gaussian(g, 0.0, 1.0).unwrap();
        let mu_t = make_gaussian(g, 0.5, 1.5).unwrap();
        let sol = solve(&mu0, &mu_t, &SolverConfig::new(1.0, 1.0, g)).unwrap();
        assert!(sol.converged);
        let (d0, dt) = sol.boundary_defects();
        assert!(d0 < 1e-3 && dt < 1e-3);
        let last = sol.marginals.len() - 1;
        assert!(wasserstein2(&sol.marginals[0], &mu0, 1000).unwrap() < 2e-3);
        assert!(wasserstein2(&sol.marginals[last], &mu_t, 1000).unwrap() < 2e-3);
        assert!(sol.sigma_min() > 0.0);
    }

    #[test]
    fn bass_rejects_non_convex_order() {
        let g = grid();
        let mu0 = make_gaussian(g, 0.0, 2.0).unwrap();
        let mu_t = make_gaussian(g, 0.0, 1.0).unwrap();
        let cfg = SolverConfig::new(1.0, 1.0, g);
        assert!(matches!(solve_bass(&mu0, &mu_t, &cfg), Err(SbbError::ConvexOrderViolation(_))));
        let shifted = make_gaussian(g, 0.5, 2.5).unwrap();
        assert!(matches!(solve_bass(&mu0, &shifted, &cfg), Err(SbbError::ConvexOrderViolation(_))));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let mu0 = make_gaussian(grid(), 0.0, 1.0).unwrap();
        let other = Grid1D::new(-10.0, 10.0, 201).unwrap();
        let mu_t = make_gaussian(other, 0.0, 2.0).unwrap();
        let cfg = SolverConfig::new(1.0, 1.0, grid());
        assert_eq!(solve(&mu0, &mu_t, &cfg).unwrap_err(), SbbError::GridMismatch);
    }
}
