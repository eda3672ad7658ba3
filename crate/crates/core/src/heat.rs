//! Gaussian-kernel propagation of the heat equation on a grid.
//!
//! The potential `h` solves the backward heat equation and is handled through
//! `log h`, so every convolution is a log-sum-exp. Densities evolve forward
//! by plain convolution.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbbError};
use crate::exec::{map_range, Execution};
use crate::grid::Grid1D;
use crate::measure::Measure1D;

/// How the kernel treats the region beyond the grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Kernel restricted to the grid and renormalised per row. Constants are
    /// preserved and the output stays between the input's extremes.
    #[default]
    Truncate,
    /// Grid extended by `8 sqrt(duration)` with a quadratic continuation of
    /// the input before convolving. Avoids the flattening that truncation
    /// causes near the edges when the input keeps growing outward.
    Extrapolate,
}

/// Mass loss tolerated by [`propagate_forward`] before warning.
pub const MASS_LOSS_WARN: f64 = 1e-6;

/// Kernel exponents below this are skipped outright.
const NEGLIGIBLE_EXPONENT: f64 = 750.0;

/// `log` of the Gaussian smoothing of `exp(log_h_terminal)` with variance
/// `duration`, using [`BoundaryMode::Truncate`].
pub fn propagate_backward_log(log_h_terminal: &[f64], grid: Grid1D, duration: f64) -> Result<Vec<f64>> {
    propagate_backward_log_with(
        log_h_terminal,
        grid,
        duration,
        BoundaryMode::Truncate,
        Execution::default(),
    )
}

pub fn propagate_backward_log_with(
    log_h_terminal: &[f64],
    grid: Grid1D,
    duration: f64,
    mode: BoundaryMode,
    exec: Execution,
) -> Result<Vec<f64>> {
    check_input(log_h_terminal, grid, duration)?;
    if duration == 0.0 {
        return Ok(log_h_terminal.to_vec());
    }
    let (z, lz, wz) = extended(log_h_terminal, grid, duration, mode, true);
    let (lmin, lmax) = min_max(&lz);
    let cutoff = 2.0 * duration * (NEGLIGIBLE_EXPONENT + (lmax - lmin));
    let out = map_range(exec, grid.len(), |i| {
        let x = grid.node(i);
        let mut num_max = f64::NEG_INFINITY;
        let mut den_max = f64::NEG_INFINITY;
        let mut terms = Vec::with_capacity(z.len());
        for j in 0..z.len() {
            let d = x - z[j];
            if d * d > cutoff {
                continue;
            }
            let k = -d * d / (2.0 * duration) + wz[j].ln();
            num_max = num_max.max(k + lz[j]);
            den_max = den_max.max(k);
            terms.push((k, lz[j]));
        }
        let num: f64 = terms.iter().map(|(k, l)| (k + l - num_max).exp()).sum();
        let den: f64 = terms.iter().map(|(k, _)| (k - den_max).exp()).sum();
        num_max + num.ln() - den_max - den.ln()
    });
    Ok(out)
}

/// Gaussian smoothing of nodal `values` (no logarithms), over a grid padded
/// by a quadratic continuation of the input.
pub fn propagate_backward_linear(values: &[f64], grid: Grid1D, duration: f64, exec: Execution) -> Result<Vec<f64>> {
    check_input(values, grid, duration)?;
    if duration == 0.0 {
        return Ok(values.to_vec());
    }
    let (z, vz, wz) = extended(values, grid, duration, BoundaryMode::Extrapolate, false);
    let cutoff = 2.0 * duration * 60.0;
    Ok(map_range(exec, grid.len(), |i| {
        let x = grid.node(i);
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..z.len() {
            let d = x - z[j];
            if d * d > cutoff {
                continue;
            }
            let k = (-d * d / (2.0 * duration)).exp() * wz[j];
            num += k * vz[j];
            den += k;
        }
        num / den
    }))
}

fn check_input(values: &[f64], grid: Grid1D, duration: f64) -> Result<()> {
    if values.len() != grid.len() {
        return Err(SbbError::GridMismatch);
    }
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(SbbError::OutOfRange {
            what: "propagation duration must be finite and non-negative",
            value: duration,
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(SbbError::OutOfRange {
            what: "propagated values must be finite",
            value: values[i],
        });
    }
    Ok(())
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

/// Nodes, values and quadrature weights of the (possibly padded) source.
/// With `cap_curvature`, the continuation's curvature is limited to
/// `0.25 / duration` so that `exp` of it remains integrable against the
/// kernel.
fn extended(
    values: &[f64],
    grid: Grid1D,
    duration: f64,
    mode: BoundaryMode,
    cap_curvature: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = grid.len();
    let dx = grid.dx();
    let mut w = grid.weights();
    if mode == BoundaryMode::Truncate {
        return (grid.nodes(), values.to_vec(), w);
    }
    let m = (8.0 * duration.sqrt() / dx).ceil() as usize;
    let cap = if cap_curvature { 0.25 / duration } else { f64::INFINITY };
    let cl = ((values[0] - 2.0 * values[1] + values[2]) / (dx * dx)).min(cap);
    let cr = ((values[n - 1] - 2.0 * values[n - 2] + values[n - 3]) / (dx * dx)).min(cap);
    let sl = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dx);
    let sr = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dx);

    let mut z = Vec::with_capacity(n + 2 * m);
    let mut v = Vec::with_capacity(n + 2 * m);
    let mut wz = Vec::with_capacity(n + 2 * m);
    for k in (1..=m).rev() {
        let d = -(k as f64) * dx;
        z.push(grid.x_min() + d);
        v.push(values[0] + sl * d + 0.5 * cl * d * d);
        wz.push(dx);
    }
    w[0] = dx;
    w[n - 1] = dx;
    z.extend(grid.nodes());
    v.extend_from_slice(values);
    wz.extend(w);
    for k in 1..=m {
        let d = k as f64 * dx;
        z.push(grid.x_max() + d);
        v.push(values[n - 1] + sr * d + 0.5 * cr * d * d);
        wz.push(dx);
    }
    (z, v, wz)
}

/// Forward heat flow of a density: convolution with the Gaussian kernel of
/// variance `duration` restricted to the grid, then renormalised. Warns when
/// more than [`MASS_LOSS_WARN`] of the mass leaves the grid.
pub fn propagate_forward(nu: &Measure1D, duration: f64) -> Result<Measure1D> {
    propagate_forward_with(nu, duration, Execution::default())
}

pub fn propagate_forward_with(nu: &Measure1D, duration: f64, exec: Execution) -> Result<Measure1D> {
    let grid = *nu.grid();
    check_input(nu.density(), grid, duration)?;
    if duration == 0.0 {
        return Ok(nu.clone());
    }
    let w = grid.weights();
    let src: Vec<f64> = nu.density().iter().zip(&w).map(|(d, w)| d * w).collect();
    let norm = 1.0 / (2.0 * std::f64::consts::PI * duration).sqrt();
    let cutoff = 2.0 * duration * NEGLIGIBLE_EXPONENT;
    let out = map_range(exec, grid.len(), |i| {
        let x = grid.node(i);
        let mut s = 0.0;
        for (j, m) in src.iter().enumerate() {
            if *m == 0.0 {
                continue;
            }
            let d = x - grid.node(j);
            if d * d > cutoff {
                continue;
            }
            s += m * (-d * d / (2.0 * duration)).exp();
        }
        s * norm
    });
    let mass = grid.integrate(&out);
    if 1.0 - mass > MASS_LOSS_WARN {
        warn!(
            "forward heat propagation over {duration} lost {:.3e} of the mass at the grid boundary",
            1.0 - mass
        );
    }
    Measure1D::new(grid, out)
}

/// `log h` stored on a grid at increasing times `0 = t_0 < ... < t_last = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeatPotential {
    grid: Grid1D,
    times: Vec<f64>,
    log_h: Vec<Vec<f64>>,
    #[serde(default)]
    boundary: BoundaryMode,
}

impl LogHeatPotential {
    pub fn new(grid: Grid1D, times: Vec<f64>, log_h: Vec<Vec<f64>>, boundary: BoundaryMode) -> Result<Self> {
        check_times(&times)?;
        if log_h.len() != times.len() {
            return Err(SbbError::InsufficientTimes(format!(
                "{} rows for {} times",
                log_h.len(),
                times.len()
            )));
        }
        for row in &log_h {
            check_input(row, grid, 0.0)?;
        }
        Ok(LogHeatPotential {
            grid,
            times,
            log_h,
            boundary,
        })
    }

    /// Fill every stored time by propagating the terminal row backward in a
    /// single step from `T`.
    pub fn from_terminal(
        grid: Grid1D,
        times: Vec<f64>,
        log_h_terminal: Vec<f64>,
        boundary: BoundaryMode,
        exec: Execution,
    ) -> Result<Self> {
        check_times(&times)?;
        let t_end = *times.last().expect("checked non-empty");
        let mut rows = Vec::with_capacity(times.len());
        for &t in &times[..times.len() - 1] {
            rows.push(propagate_backward_log_with(&log_h_terminal, grid, t_end - t, boundary, exec)?);
        }
        rows.push(log_h_terminal);
        LogHeatPotential::new(grid, times, rows, boundary)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    pub fn boundary(&self) -> BoundaryMode {
        self.boundary
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.log_h
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * self.horizon().max(1.0);
        self.times
            .iter()
            .position(|s| (s - t).abs() <= tol)
            .ok_or(SbbError::TimeNotStored(t))
    }

    pub fn row(&self, t: f64) -> Result<&[f64]> {
        Ok(&self.log_h[self.time_index(t)?])
    }

    pub fn terminal(&self) -> &[f64] {
        self.log_h.last().expect("non-empty")
    }

    /// `log h(t, .)` at any `t` in `[0, T]`, propagated from the nearest
    /// stored time at or after `t`.
    pub fn at(&self, t: f64, exec: Execution) -> Result<Vec<f64>> {
        if !(t >= 0.0 && t <= self.horizon()) {
            return Err(SbbError::OutOfRange {
                what: "time outside [0, T]",
                value: t,
            });
        }
        if let Ok(i) = self.time_index(t) {
            return Ok(self.log_h[i].clone());
        }
        let k = self.times.partition_point(|&s| s < t);
        propagate_backward_log_with(&self.log_h[k], self.grid, self.times[k] - t, self.boundary, exec)
    }

    /// Row-major flattening of the stored rows.
    pub fn flattened(&self) -> Vec<f64> {
        self.log_h.iter().flatten().copied().collect()
    }

    /// Mutable access for diagnostics that inject defects.
    pub fn row_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.log_h[index]
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(SbbError::InsufficientTimes("need at least 0 and T".into()));
    }
    if times[0] != 0.0 {
        return Err(SbbError::InsufficientTimes("first time must be 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || !times.iter().all(|t| t.is_finite()) {
        return Err(SbbError::InsufficientTimes("times must be strictly increasing".into()));
    }
    Ok(())
}

/// Sup-norm gap between the stored row at `s` and the stored row at `t`
/// propagated back to `s`. Nodes within `6 sqrt(T - s)` of either edge are
/// excluded, since the grid cannot resolve the kernel there.
pub fn semigroup_check(p: &LogHeatPotential, s: f64, t: f64) -> Result<f64> {
    if !(s < t) {
        return Err(SbbError::OutOfRange {
            what: "semigroup_check needs s < t",
            value: s,
        });
    }
    let is = p.time_index(s)?;
    let it = p.time_index(t)?;
    let back = propagate_backward_log_with(&p.log_h[it], p.grid, t - s, p.boundary, Execution::default())?;
    let margin = 6.0 * (p.horizon() - s).sqrt();
    let lo = p.grid.x_min() + margin;
    let hi = p.grid.x_max() - margin;
    let mut sup = 0.0_f64;
    let mut any = false;
    for i in 0..p.grid.len() {
        let x = p.grid.node(i);
        if x >= lo && x <= hi {
            any = true;
            sup = sup.max((back[i] - p.log_h[is][i]).abs());
        }
    }
    if !any {
        let mid = p.grid.len() / 2;
        sup = (back[mid] - p.log_h[is][mid]).abs();
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{make_gaussian, make_uniform};
    use proptest::prelude::*;

    fn grid() -> Grid1D {
        Grid1D::new(-10.0, 10.0, 801).unwrap()
    }

    #[test]
    fn constants_are_invariant() {
        let g = grid();
        let c = vec![2.5; g.len()];
        for mode in [BoundaryMode::Truncate, BoundaryMode::Extrapolate] {
            let out = propagate_backward_log_with(&c, g, 0.7, mode, Execution::Sequential).unwrap();
            assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_duration_is_identity() {
        let g = grid();
        let v: Vec<f64> = g.nodes().iter().map(|x| x.sin()).collect();
        assert_eq!(propagate_backward_log(&v, g, 0.0).unwrap(), v);
        let m = make_gaussian(g, 0.0, 1.0).unwrap();
        assert_eq!(propagate_forward(&m, 0.0).unwrap(), m);
    }

    #[test]
    fn gaussian_variances_add_in_log_domain() {
        let g = grid();
        let n1 = make_gaussian(g, 0.0, 1.0).unwrap();
        let n2 = make_gaussian(g, 0.0, 2.0).unwrap();
        let l1: Vec<f64> = n1.density().iter().map(|d| d.ln()).collect();
        let out = propagate_backward_log(&l1, g, 1.0).unwrap();
        for i in 200..=600 {
            assert!((out[i] - n2.density()[i].ln()).abs() < 1e-6, "node {i}");
        }
    }

    #[test]
    fn exponential_tilt() {
        let g = grid();
        let beta = 1.0;
        let t = 0.5;
        let l: Vec<f64> = g.nodes().iter().map(|y| beta * y).collect();
        let out = propagate_backward_log(&l, g, t).unwrap();
        for i in 200..=600 {
            let y = g.node(i);
            assert!((out[i] - (beta * y + beta * beta * t / 2.0)).abs() < 1e-6);
        }
        let out = propagate_backward_log_with(&l, g, t, BoundaryMode::Extrapolate, Execution::Sequential).unwrap();
        for i in 0..g.len() {
            let y = g.node(i);
            assert!((out[i] - (beta * y + beta * beta * t / 2.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_gaussian() {
        let g = grid();
        let n1 = make_gaussian(g, 0.0, 1.0).unwrap();
        let n2 = make_gaussian(g, 0.0, 2.0).unwrap();
        let out = propagate_forward(&n1, 1.0).unwrap();
        for (a, b) in out.density().iter().zip(n2.density()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_uniform_matches_erf_formula() {
        let g = Grid1D::new(-5.0, 5.0, 2001).unwrap();
        let u = make_uniform(g, -1.0, 1.0).unwrap();
        let out = propagate_forward(&u, 0.25).unwrap();
        // Density at 0 of U[-1, 1] + N(0, 0.25) is (Phi(2) - Phi(-2)) / 2.
        let want = 0.5 * statrs::function::erf::erf(2.0 / std::f64::consts::SQRT_2);
        assert!((out.density()[1000] - want).abs() < 1e-5, "{}", out.density()[1000]);
    }

    #[test]
    fn semigroup_examples() {
        let g = grid();
        let times = vec![0.0, 0.25, 0.5, 1.0];
        let l: Vec<f64> = g.nodes().iter().map(|y| (0.8 * y).sin() - 0.1 * y * y).collect();
        let p = LogHeatPotential::from_terminal(g, times.clone(), l, BoundaryMode::Truncate, Execution::default()).unwrap();
        assert!(semigroup_check(&p, 0.0, 0.5).unwrap() < 1e-8);
        assert!(semigroup_check(&p, 0.25, 1.0).unwrap() < 1e-8);
        assert!(matches!(semigroup_check(&p, 0.1, 1.0), Err(SbbError::TimeNotStored(_))));

        let mut bad = p.clone();
        bad.row_mut(1)[400] += 1.0;
        assert!(semigroup_check(&bad, 0.25, 1.0).unwrap() >= 0.9);

        let tilt: Vec<f64> = g.nodes().iter().map(|y| 2.0 * y).collect();
        let p = LogHeatPotential::from_terminal(g, times, tilt, BoundaryMode::Extrapolate, Execution::default()).unwrap();
        assert!(semigroup_check(&p, 0.0, 1.0).unwrap() < 1e-6);
    }

    #[test]
    fn potential_rejects_bad_times() {
        let g = grid();
        let row = vec![0.0; g.len()];
        assert!(LogHeatPotential::new(g, vec![0.0], vec![row.clone()], BoundaryMode::Truncate).is_err());
        assert!(LogHeatPotential::new(g, vec![0.1, 1.0], vec![row.clone(), row.clone()], BoundaryMode::Truncate).is_err());
        assert!(LogHeatPotential::new(g, vec![0.0, 0.0], vec![row.clone(), row.clone()], BoundaryMode::Truncate).is_err());
    }

    #[test]
    fn linear_propagation_of_quadratic() {
        let g = grid();
        let v: Vec<f64> = g.nodes().iter().map(|y| y * y).collect();
        let out = propagate_backward_linear(&v, g, 0.5, Execution::default()).unwrap();
        for i in 0..g.len() {
            let y = g.node(i);
            assert!((out[i] - y * y - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let g = grid();
        let v: Vec<f64> = g.nodes().iter().map(|y| (1.3 * y).cos()).collect();
        let a = propagate_backward_log_with(&v, g, 0.3, BoundaryMode::Extrapolate, Execution::Parallel).unwrap();
        let b = propagate_backward_log_with(&v, g, 0.3, BoundaryMode::Extrapolate, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn maximum_principle(vals in prop::collection::vec(-30.0f64..30.0, 64), tau in 0.01f64..2.0) {
            let g = Grid1D::new(-4.0, 4.0, 64).unwrap();
            let out = propagate_backward_log(&vals, g, tau).unwrap();
            let (lo, hi) = min_max(&vals);
            for v in out {
                prop_assert!(v.is_finite());
                prop_assert!(v >= lo - 1e-10 && v <= hi + 1e-10);
            }
        }

        #[test]
        fn semigroup_property(si in 0usize..3, ti in 0usize..3, a in -1.0f64..1.0) {
            let ds = [0.1, 0.25, 0.5];
            let (s, t) = (ds[si], ds[ti]);
            let g = grid();
            let v: Vec<f64> = g.nodes().iter().map(|y| a * y - 0.2 * y * y + (0.5 * y).sin()).collect();
            let once = propagate_backward_log(&v, g, s + t).unwrap();
            let twice = propagate_backward_log(&propagate_backward_log(&v, g, s).unwrap(), g, t).unwrap();
            for i in 240..=560 {
                prop_assert!((once[i] - twice[i]).abs() < 1e-6);
            }
        }

        #[test]
        fn forward_mass_is_conserved(m in -2.0f64..2.0, v in 0.3f64..1.5, tau in 0.0f64..1.5) {
            let g = grid();
            let nu = make_gaussian(g, m, v).unwrap();
            let out = propagate_forward(&nu, tau).unwrap();
            prop_assert!((out.mass() - 1.0).abs() < 1e-8);
        }
    }
}
