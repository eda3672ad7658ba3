//! Stretching maps and optimal coefficients derived from `log h`.
//!
//! With `l = log h(t, .)` on the bridge grid, the stretching map is
//! `X(y) = y + l'(y) / beta`, its inverse `Y` is the minimiser of
//! `y -> l(y) + beta/2 (x - y)^2`, and the optimal drift and volatility at
//! state `x` are `l'(Y(x))` and `1 + l''(Y(x)) / beta`.

use serde::{Deserialize, Serialize};

use crate::convex::{derivative, gradient_map, ConvexPotential, MonotoneMap};
use crate::error::{Result, SbbError};
use crate::grid::Grid1D;

/// Drift and volatility at the nodes of the state grid at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessCoefficients {
    pub grid: Grid1D,
    pub time: f64,
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ProcessCoefficients {
    /// Brownian coefficients: zero drift, unit volatility.
    pub fn brownian(grid: Grid1D, time: f64) -> Self {
        ProcessCoefficients {
            grid,
            time,
            alpha: vec![0.0; grid.len()],
            sigma: vec![1.0; grid.len()],
        }
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Second derivative: standard three-point stencil inside, second-order
/// one-sided four-point stencil at the ends.
pub(crate) fn second_derivative(v: &[f64], dx: f64) -> Vec<f64> {
    let n = v.len();
    let h2 = dx * dx;
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (v[i - 1] - 2.0 * v[i] + v[i + 1]) / h2;
    }
    d[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2;
    d[n - 1] = (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / h2;
    d
}

/// Nodal values of `y + l'(y) / beta`, without any monotonicity check.
pub(crate) fn stretch_values(log_h_t: &[f64], grid: Grid1D, beta: f64) -> Vec<f64> {
    let d = derivative(log_h_t, grid.dx());
    grid.nodes()
        .into_iter()
        .zip(d)
        .map(|(y, g)| y + g / beta)
        .collect()
}

fn check_args(log_h_t: &[f64], grid: Grid1D, beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(SbbError::InvalidConfig {
            field: "beta",
            reason: format!("must be positive and finite, got {beta}"),
        });
    }
    if log_h_t.len() != grid.len() {
        return Err(SbbError::GridMismatch);
    }
    if let Some(i) = log_h_t.iter().position(|v| !v.is_finite()) {
        return Err(SbbError::OutOfRange {
            what: "log h must be finite",
            value: log_h_t[i],
        });
    }
    Ok(())
}

/// The stretching map `y + (1/beta) d/dy log h`. A non-increasing step is
/// reported, not repaired: it means the volatility would be non-positive.
pub fn x_map(log_h_t: &[f64], grid: Grid1D, beta: f64) -> Result<MonotoneMap> {
    check_args(log_h_t, grid, beta)?;
    let vals = stretch_values(log_h_t, grid, beta);
    MonotoneMap::new(grid, vals).map_err(|e| match e {
        SbbError::NonMonotoneMap { indices } => SbbError::MonotonicityViolation { indices },
        other => other,
    })
}

/// Inverse of [`x_map`] sampled on `x_grid`: the minimiser of
/// `y -> log h(y) + beta/2 (x - y)^2`. Points of `x_grid` outside the range
/// of the stretching map use its linear continuation.
pub fn y_map(log_h_t: &[f64], grid: Grid1D, beta: f64, x_grid: Grid1D) -> Result<MonotoneMap> {
    let x = x_map(log_h_t, grid, beta)?;
    Ok(invert_extrapolated(&x, x_grid))
}

pub(crate) fn invert_extrapolated(x: &MonotoneMap, x_grid: Grid1D) -> MonotoneMap {
    let vals: Vec<f64> = x_grid.nodes().into_iter().map(|v| x.inverse_eval(v)).collect();
    MonotoneMap::new(x_grid, vals).unwrap_or_else(|_| crate::convex::invert_monotone(x, x_grid))
}

/// Optimal drift `l'(Y(x))` and volatility `1 + l''(Y(x)) / beta` on the
/// state grid (taken equal to the bridge grid).
pub fn coefficients(log_h_t: &[f64], grid: Grid1D, beta: f64, time: f64) -> Result<ProcessCoefficients> {
    let y = y_map(log_h_t, grid, beta, grid)?;
    let d1 = derivative(log_h_t, grid.dx());
    let d2 = second_derivative(log_h_t, grid.dx());
    let mut alpha = Vec::with_capacity(grid.len());
    let mut sigma = Vec::with_capacity(grid.len());
    for (i, &yi) in y.values().iter().enumerate() {
        alpha.push(grid.interp(&d1, yi));
        let s = 1.0 + grid.interp_clamped(&d2, yi) / beta;
        if !(s > 0.0) {
            return Err(SbbError::NonPositiveSigma { index: i, sigma: s });
        }
        sigma.push(s);
    }
    Ok(ProcessCoefficients {
        grid,
        time,
        alpha,
        sigma,
    })
}

/// Cubic Hermite interpolation of `f` with nodal derivatives `df`, linear
/// continuation outside the grid.
pub(crate) fn hermite(grid: &Grid1D, f: &[f64], df: &[f64], x: f64) -> f64 {
    let n = f.len();
    if x <= grid.x_min() {
        return f[0] + df[0] * (x - grid.x_min());
    }
    if x >= grid.x_max() {
        return f[n - 1] + df[n - 1] * (x - grid.x_max());
    }
    let h = grid.dx();
    let (i, s) = grid.locate(x);
    let t = s / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * f[i] + h10 * h * df[i] + h01 * f[i + 1] + h11 * h * df[i + 1]
}

/// Sup-norm defects reported by [`consistency_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// `sup |X(Y(x)) - x|`.
    pub x_of_y: f64,
    /// `sup |Y(X(y)) - y|`.
    pub y_of_x: f64,
    /// Largest pairwise gap between the four drift formulas.
    pub drift_chain: f64,
}

impl ConsistencyReport {
    pub fn max(&self) -> f64 {
        self.x_of_y.max(self.y_of_x).max(self.drift_chain)
    }

    fn infinite() -> Self {
        ConsistencyReport {
            x_of_y: f64::INFINITY,
            y_of_x: f64::INFINITY,
            drift_chain: f64::INFINITY,
        }
    }
}

/// Cross-check the map pair and the drift on the central two thirds of the
/// grid. The drift is computed four ways: by differencing the value function
/// `v(x) = min_y { l(y) + beta/2 (x - y)^2 }`, as `beta (x - Y(x))`, as
/// `beta (G'(Y(x)) - Y(x))` with `G = y^2/2 + l/beta`, and as `l'(Y(x))`.
/// A stretching map that is not increasing yields infinite defects.
pub fn consistency_check(log_h_t: &[f64], grid: Grid1D, beta: f64) -> ConsistencyReport {
    if check_args(log_h_t, grid, beta).is_err() {
        return ConsistencyReport::infinite();
    }
    let x = match x_map(log_h_t, grid, beta) {
        Ok(m) => m,
        Err(_) => return ConsistencyReport::infinite(),
    };
    let y = invert_extrapolated(&x, grid);
    let d1 = derivative(log_h_t, grid.dx());
    let n = grid.len();
    let (lo, hi) = (n / 6, n - n / 6);

    let value = |xi: f64, yi: f64| hermite(&grid, log_h_t, &d1, yi) + 0.5 * beta * (xi - yi) * (xi - yi);
    let v: Vec<f64> = (0..n).map(|i| value(grid.node(i), y.values()[i])).collect();

    let g_vals: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(log_h_t)
        .map(|(s, l)| 0.5 * s * s + l / beta)
        .collect();
    let grad_g = ConvexPotential::new(grid, g_vals)
        .map(|g| gradient_map(&g))
        .unwrap_or_else(|_| x.clone());

    let mut report = ConsistencyReport {
        x_of_y: 0.0,
        y_of_x: 0.0,
        drift_chain: 0.0,
    };
    for i in lo.max(1)..hi.min(n - 1) {
        let xi = grid.node(i);
        let yi = y.values()[i];
        report.x_of_y = report.x_of_y.max((x.eval(yi) - xi).abs());
        report.y_of_x = report.y_of_x.max((y.eval(x.values()[i]) - grid.node(i)).abs());

        let a = (v[i + 1] - v[i - 1]) / (2.0 * grid.dx());
        let b = beta * (xi - yi);
        let c = beta * (grad_g.eval(yi) - yi);
        let d = grid.interp(&d1, yi);
        let routes = [a, b, c, d];
        for p in 0..4 {
            for q in p + 1..4 {
                report.drift_chain = report.drift_chain.max((routes[p] - routes[q]).abs());
            }
        }
    }
    report
}
