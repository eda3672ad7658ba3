//! Closed-form oracles and shared scenarios for the integration tests.

#![allow(dead_code)]

use sbb_core::{make_gaussian, make_mixture, Grid1D, Measure1D};

pub fn grid() -> Grid1D {
    Grid1D::new(-10.0, 10.0, 801).unwrap()
}

/// Wider grid for bimodal and small-beta scenarios, where the bridge
/// coordinate is displaced far from the state.
pub fn wide_grid() -> Grid1D {
    Grid1D::new(-20.0, 20.0, 1601).unwrap()
}

pub fn gaussian(g: Grid1D, mean: f64, var: f64) -> Measure1D {
    make_gaussian(g, mean, var).unwrap()
}

pub fn bimodal_pair(g: Grid1D) -> (Measure1D, Measure1D) {
    (
        make_mixture(g, &[(0.5, -1.5, 0.3), (0.5, 1.5, 0.3)]).unwrap(),
        make_mixture(g, &[(0.5, -1.0, 0.5), (0.5, 2.0, 0.4)]).unwrap(),
    )
}

/// Static coupling covariance of the Gaussian Schrödinger bridge between
/// variances `a` and `b` with Brownian reference over `[0, horizon]`.
pub fn entropic_covariance(a: f64, b: f64, horizon: f64) -> f64 {
    0.5 * (-horizon + (horizon * horizon + 4.0 * a * b).sqrt())
}

/// Mean and variance of the Gaussian Schrödinger bridge at time `t`.
pub fn entropic_marginal(m0: f64, a: f64, m1: f64, b: f64, horizon: f64, t: f64) -> (f64, f64) {
    let s = t / horizon;
    let c = entropic_covariance(a, b, horizon);
    let mean = (1.0 - s) * m0 + s * m1;
    let var = (1.0 - s).powi(2) * a + s * s * b + 2.0 * s * (1.0 - s) * c + horizon * s * (1.0 - s);
    (mean, var)
}

/// Relative entropy of the Gaussian Schrödinger bridge with respect to
/// Brownian motion started from `N(m0, a)`, which equals its control cost.
pub fn entropic_cost(m0: f64, a: f64, m1: f64, b: f64, horizon: f64) -> f64 {
    let c = entropic_covariance(a, b, horizon);
    let d = m1 - m0;
    let trace = (a + b - 2.0 * c + horizon) / horizon;
    0.5 * (trace + d * d / horizon - 2.0 + (a * horizon / (a * b - c * c)).ln())
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Gaussian Bass martingale from `N(0, a)` to `N(0, b)`: the terminal map is
/// `y -> s y` with `ν_0 = N(0, v)`. The stretch is quadratic, so heat
/// smoothing keeps the slope and the constraints are `s^2 v = a` and
/// `s^2 (v + T) = b`. Solved by nested bisection over `(s, v)`.
pub fn bass_gaussian(a: f64, b: f64, horizon: f64) -> (f64, f64) {
    let v_of = |s: f64| bisect(1e-9, 1e6, |v| s * s * v - a);
    let s = bisect(1e-6, 1e3, |s| s * s * (v_of(s) + horizon) - b);
    (s, v_of(s))
}
