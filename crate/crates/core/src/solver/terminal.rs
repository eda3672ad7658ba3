//! Terminal condition of the bridge as a nonlinear equation in `w = log h / beta`.
//!
//! At time `T` the law of the bridge coordinate, `h ν`, must equal the image
//! of `mu_T` under the inverse stretching map. With `X = y + w'` this reads
//!
//! `log mu_T(X(y)) + log X'(y) - log ν_T(y) - beta w(y) = 0`,
//!
//! a discrete Monge–Ampère equation solved here by Newton's method. Ghost
//! values at both ends keep `X''` zero there, so the map continues linearly
//! into the tails.

use log::debug;

use crate::error::{Result, SbbError};
use crate::grid::Grid1D;
use crate::linalg::BandMatrix;

const MAX_NEWTON: usize = 80;
const RESIDUAL_TOL: f64 = 1e-11;

/// Piecewise-linear interpolation of nodal `log mu_T`, linearly continued.
/// Returns the value and the slope of the cell used.
#[inline]
fn log_mu_at(grid: &Grid1D, log_mu: &[f64], x: f64) -> (f64, f64) {
    let (i, s) = grid.locate(x);
    let slope = (log_mu[i + 1] - log_mu[i]) / grid.dx();
    (log_mu[i] + slope * s, slope)
}

struct Eval {
    r: Vec<f64>,
    xp: Vec<f64>,
    slope: Vec<f64>,
}

fn padded(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let mut p = Vec::with_capacity(n + 2);
    p.push(3.0 * w[0] - 3.0 * w[1] + w[2]);
    p.extend_from_slice(w);
    p.push(3.0 * w[n - 1] - 3.0 * w[n - 2] + w[n - 3]);
    p
}

fn evaluate(grid: &Grid1D, w: &[f64], log_mu: &[f64], log_nu: &[f64], beta: f64) -> Option<Eval> {
    let n = w.len();
    let dx = grid.dx();
    let p = padded(w);
    let mut r = Vec::with_capacity(n);
    let mut xp = Vec::with_capacity(n);
    let mut slope = Vec::with_capacity(n);
    for i in 0..n {
        let (wm, w0, wp) = (p[i], p[i + 1], p[i + 2]);
        let x = grid.node(i) + (wp - wm) / (2.0 * dx);
        let d = 1.0 + (wp - 2.0 * w0 + wm) / (dx * dx);
        if !(d > 0.0) {
            return None;
        }
        let (l, s) = log_mu_at(grid, log_mu, x);
        r.push(l + d.ln() - log_nu[i] - beta * w0);
        xp.push(d);
        slope.push(s);
    }
    Some(Eval { r, xp, slope })
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solve the terminal equation starting from `w`. Returns the solution and
/// the final sup-norm residual.
pub(crate) fn solve_terminal(
    grid: &Grid1D,
    w_start: &[f64],
    log_mu: &[f64],
    log_nu: &[f64],
    beta: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = grid.len();
    let dx = grid.dx();
    let mut w = w_start.to_vec();
    let mut ev = evaluate(grid, &w, log_mu, log_nu, beta).ok_or_else(|| SbbError::MonotonicityViolation {
        indices: vec![],
    })?;
    for it in 0..MAX_NEWTON {
        let r0 = sup(&ev.r);
        if r0 < RESIDUAL_TOL {
            return Ok((w, r0));
        }
        let mut jac = BandMatrix::zeros(n, 2, 2);
        for i in 0..n {
            let inv = 1.0 / (dx * dx * ev.xp[i]);
            let cm = -ev.slope[i] / (2.0 * dx) + inv;
            let cp = ev.slope[i] / (2.0 * dx) + inv;
            let c0 = -2.0 * inv - beta;
            jac.add(i, i, c0);
            if i == 0 {
                jac.add(i, 0, 3.0 * cm);
                jac.add(i, 1, -3.0 * cm);
                jac.add(i, 2, cm);
            } else {
                jac.add(i, i - 1, cm);
            }
            if i == n - 1 {
                jac.add(i, n - 1, 3.0 * cp);
                jac.add(i, n - 2, -3.0 * cp);
                jac.add(i, n - 3, cp);
            } else {
                jac.add(i, i + 1, cp);
            }
        }
        let rhs: Vec<f64> = ev.r.iter().map(|r| -r).collect();
        let step = jac.solve(&rhs)?;
        let base = rms(&ev.r);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-10 {
            let trial: Vec<f64> = w.iter().zip(&step).map(|(a, d)| a + t * d).collect();
            if let Some(e) = evaluate(grid, &trial, log_mu, log_nu, beta) {
                if rms(&e.r) < base * (1.0 - 1e-4 * t) {
                    accepted = Some((trial, e));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, e)) => {
                debug!("terminal newton {it}: sup residual {r0:.3e}, step {t}");
                w = trial;
                ev = e;
            }
            None => {
                debug!("terminal newton stalled at sup residual {r0:.3e}");
                return Ok((w, r0));
            }
        }
    }
    let r = sup(&ev.r);
    Ok((w, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_terminal_map_is_affine() {
        // mu_T = N(0, 4), nu_T = N(0, 1): the solution is w = c y^2 / 2 + k.
        let g = Grid1D::new(-10.0, 10.0, 401).unwrap();
        let y = g.nodes();
        let log_mu: Vec<f64> = y.iter().map(|x| -x * x / 8.0).collect();
        let log_nu: Vec<f64> = y.iter().map(|x| -x * x / 2.0).collect();
        let beta = 0.5;
        let (w, r) = solve_terminal(&g, &vec![0.0; g.len()], &log_mu, &log_nu, beta).unwrap();
        assert!(r < 1e-9, "residual {r}");
        // Matching the y^2 terms: -(1+c)^2/8 + 1/2 - beta c/2 = 0.
        let c = {
            let f = |c: f64| -(1.0 + c) * (1.0 + c) / 8.0 + 0.5 - beta * c / 2.0;
            let (mut a, mut b) = (0.0, 2.0);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if f(a) * f(m) <= 0.0 {
                    b = m;
                } else {
                    a = m;
                }
            }
            0.5 * (a + b)
        };
        let mid = g.len() / 2;
        let dx = g.dx();
        for i in 100..300 {
            let curv = (w[i - 1] - 2.0 * w[i] + w[i + 1]) / (dx * dx);
            assert!((curv - c).abs() < 1e-3, "{i}: {curv} vs {c}");
        }
        assert!(w[mid].is_finite());
    }
}
