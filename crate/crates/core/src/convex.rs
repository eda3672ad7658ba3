//! Convex potentials on a grid, their discrete Legendre transforms, and the
//! increasing maps obtained as their gradients.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbbError};
use crate::grid::Grid1D;

/// Gap enforced between consecutive values by the isotonic repair.
pub const STRICT_GAP: f64 = 1e-12;

/// Convex function sampled at grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPotential {
    grid: Grid1D,
    values: Vec<f64>,
}

impl ConvexPotential {
    /// Accepts values whose second differences are at least
    /// `-1e-9 * (1 + max|v|)`.
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(SbbError::InvalidGrid(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SbbError::NonConvex { index: i });
        }
        let sup = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = -1e-9 * (1.0 + sup);
        for i in 1..values.len() - 1 {
            if values[i - 1] - 2.0 * values[i] + values[i + 1] < tol {
                return Err(SbbError::NonConvex { index: i });
            }
        }
        Ok(ConvexPotential { grid, values })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        ConvexPotential::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Strictly increasing map sampled at grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapSpec", into = "MapSpec")]
pub struct MonotoneMap {
    grid: Grid1D,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MapSpec {
    grid: Grid1D,
    values: Vec<f64>,
}

impl TryFrom<MapSpec> for MonotoneMap {
    type Error = SbbError;
    fn try_from(s: MapSpec) -> Result<Self> {
        MonotoneMap::new(s.grid, s.values)
    }
}

impl From<MonotoneMap> for MapSpec {
    fn from(m: MonotoneMap) -> Self {
        MapSpec {
            grid: m.grid,
            values: m.values,
        }
    }
}

impl MonotoneMap {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(SbbError::InvalidGrid(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let bad = non_increasing_indices(&values);
        if !bad.is_empty() {
            return Err(SbbError::NonMonotoneMap { indices: bad });
        }
        Ok(MonotoneMap { grid, values })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        MonotoneMap::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn identity(grid: Grid1D) -> Self {
        MonotoneMap {
            grid,
            values: grid.nodes(),
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn check_strict(&self) -> Result<()> {
        let bad = non_increasing_indices(&self.values);
        if bad.is_empty() {
            Ok(())
        } else {
            Err(SbbError::NonMonotoneMap { indices: bad })
        }
    }

    /// Piecewise-linear evaluation, extrapolated linearly beyond the grid.
    pub fn eval(&self, x: f64) -> f64 {
        self.grid.interp(&self.values, x)
    }

    /// Piecewise-linear inverse, extrapolated linearly beyond the range.
    pub fn inverse_eval(&self, y: f64) -> f64 {
        let v = &self.values;
        let n = v.len();
        let k = v.partition_point(|&a| a <= y);
        let i = k.clamp(1, n - 1) - 1;
        let t = (y - v[i]) / (v[i + 1] - v[i]);
        self.grid.node(i) + t * self.grid.dx()
    }

    /// Composition `other ∘ self` on this map's grid.
    pub fn then(&self, other: &MonotoneMap) -> Result<MonotoneMap> {
        let vals = self.values.iter().map(|&y| other.eval(y)).collect();
        MonotoneMap::new(self.grid, vals)
    }

    /// Largest `|self(x) - other(x)|` over the nodes of a shared grid.
    pub fn sup_distance(&self, other: &MonotoneMap) -> Result<f64> {
        if self.grid != other.grid {
            return Err(SbbError::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }
}

fn non_increasing_indices(values: &[f64]) -> Vec<usize> {
    let mut bad: Vec<usize> = values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| !(w[1] > w[0]))
        .map(|(i, _)| i + 1)
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        bad.insert(0, i);
        bad.dedup();
    }
    bad
}

/// Discrete conjugate `p*(y) = max_i (x_i y - p_i)` on `dual_grid`.
///
/// Only vertices of the lower convex hull of `(x_i, p_i)` can attain the
/// maximum, and the optimal vertex moves right as `y` increases, so one pass
/// over the hull serves every dual node. Near-ties are resolved by comparing
/// the original nodes between neighbouring hull vertices directly, which
/// makes the result coincide with the brute-force maximum.
pub fn legendre_transform(p: &ConvexPotential, dual_grid: Grid1D) -> ConvexPotential {
    let x = p.grid.nodes();
    let u = &p.values;
    let hull = lower_hull(&x, u);
    let slope = |k: usize| (u[hull[k + 1]] - u[hull[k]]) / (x[hull[k + 1]] - x[hull[k]]);
    let value = |i: usize, y: f64| x[i] * y - u[i];
    let scale = u.iter().fold(1.0_f64, |m, v| m.max(v.abs()));

    let mut out = Vec::with_capacity(dual_grid.len());
    let mut k = 0;
    for j in 0..dual_grid.len() {
        let y = dual_grid.node(j);
        while k + 1 < hull.len() && slope(k) < y {
            k += 1;
        }
        let best = value(hull[k], y);
        let tol = 1e-9 * (scale + best.abs() + y.abs() * x[x.len() - 1].abs().max(x[0].abs()));
        let mut lo = k;
        while lo > 0 && value(hull[lo - 1], y) >= best - tol {
            lo -= 1;
        }
        let mut hi = k;
        while hi + 1 < hull.len() && value(hull[hi + 1], y) >= best - tol {
            hi += 1;
        }
        let first = hull[lo.saturating_sub(1)];
        let last = hull[(hi + 1).min(hull.len() - 1)];
        let m = (first..=last)
            .map(|i| value(i, y))
            .fold(f64::NEG_INFINITY, f64::max);
        out.push(m);
    }
    ConvexPotential {
        grid: dual_grid,
        values: out,
    }
}

/// Indices of the lower convex hull of the points `(x_i, u_i)`, `x` sorted.
fn lower_hull(x: &[f64], u: &[f64]) -> Vec<usize> {
    let mut h: Vec<usize> = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        while h.len() >= 2 {
            let a = h[h.len() - 2];
            let b = h[h.len() - 1];
            // Drop b when it lies on or above the chord from a to i.
            let cross = (x[b] - x[a]) * (u[i] - u[a]) - (u[b] - u[a]) * (x[i] - x[a]);
            if cross <= 0.0 {
                h.pop();
            } else {
                break;
            }
        }
        h.push(i);
    }
    h
}

/// Sup-norm of `p - p**` over the central two thirds of the grid, with the
/// dual grid equal to the primal grid.
pub fn involution_defect(p: &ConvexPotential) -> f64 {
    let star = legendre_transform(p, p.grid);
    let back = legendre_transform(&star, p.grid);
    let n = p.grid.len();
    let (lo, hi) = (n / 6, n - n / 6);
    (lo..hi).fold(0.0_f64, |m, i| m.max((p.values[i] - back.values[i]).abs()))
}

/// Derivative of a convex potential as an increasing map: central differences
/// inside, second-order one-sided differences at the ends, followed by
/// [`isotonic_repair`].
pub fn gradient_map(p: &ConvexPotential) -> MonotoneMap {
    let mut d = derivative(&p.values, p.grid.dx());
    isotonic_repair(&mut d, STRICT_GAP);
    MonotoneMap {
        grid: p.grid,
        values: d,
    }
}

/// First derivative of nodal values: central inside, second-order one-sided
/// at both ends.
pub(crate) fn derivative(v: &[f64], dx: f64) -> Vec<f64> {
    let n = v.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - v[i - 1]) / (2.0 * dx);
    }
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx);
    d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dx);
    d
}

/// Least-squares projection onto nondecreasing sequences (pool adjacent
/// violators), then a forward pass lifting each value to at least its
/// predecessor plus `gap`. Strictly increasing input with steps above `gap`
/// is left untouched.
pub fn isotonic_repair(v: &mut [f64], gap: f64) {
    if v.windows(2).all(|w| w[1] >= w[0] + gap) {
        return;
    }
    // Blocks of (sum, count).
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &x in v.iter() {
        blocks.push((x, 1));
        while blocks.len() >= 2 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 > s1 / c1 as f64 {
                blocks.pop();
                let last = blocks.len() - 1;
                blocks[last] = (s0 + s1, c0 + c1);
            } else {
                break;
            }
        }
    }
    let mut k = 0;
    for (s, c) in blocks {
        let mean = s / c as f64;
        for _ in 0..c {
            v[k] = mean;
            k += 1;
        }
    }
    for i in 1..v.len() {
        if v[i] < v[i - 1] + gap {
            v[i] = v[i - 1] + gap;
        }
    }
}

/// Inverse of `m` sampled on `target_grid`. Target nodes outside the range
/// of `m` are clamped to the ends of `m`'s grid (with a warning) and the
/// result is made strictly increasing by [`isotonic_repair`].
pub fn invert_monotone(m: &MonotoneMap, target_grid: Grid1D) -> MonotoneMap {
    let vals = &m.values;
    let (lo, hi) = (vals[0], vals[vals.len() - 1]);
    let mut clamped = 0usize;
    let mut out: Vec<f64> = target_grid
        .nodes()
        .into_iter()
        .map(|x| {
            if x < lo {
                clamped += 1;
                m.grid.x_min()
            } else if x > hi {
                clamped += 1;
                m.grid.x_max()
            } else {
                m.inverse_eval(x)
            }
        })
        .collect();
    if clamped > 0 {
        warn!(
            "invert_monotone: {clamped} target nodes outside map range [{lo}, {hi}] were clamped"
        );
    }
    isotonic_repair(&mut out, STRICT_GAP);
    MonotoneMap {
        grid: target_grid,
        values: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Grid1D {
        Grid1D::new(lo, hi, n).unwrap()
    }

    fn brute(p: &ConvexPotential, dual: Grid1D) -> Vec<f64> {
        let x = p.grid.nodes();
        dual.nodes()
            .into_iter()
            .map(|y| {
                x.iter()
                    .zip(&p.values)
                    .map(|(xi, ui)| xi * y - ui)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    #[test]
    fn half_square_is_self_conjugate() {
        let g = grid(-8.0, 8.0, 801);
        let p = ConvexPotential::from_fn(g, |x| 0.5 * x * x).unwrap();
        let s = legendre_transform(&p, g);
        for i in 100..=700 {
            let y = g.node(i);
            assert!((s.values()[i] - 0.5 * y * y).abs() < 1e-4);
        }
        assert!(involution_defect(&p) < 1e-4);
    }

    #[test]
    fn scaled_quadratic() {
        let g = grid(-8.0, 8.0, 801);
        let p = ConvexPotential::from_fn(g, |x| x * x).unwrap();
        let s = legendre_transform(&p, g);
        for i in 100..=700 {
            let y = g.node(i);
            let err = (s.values()[i] - 0.25 * y * y).abs();
            // The worst node sits exactly half a cell from the maximiser, where
            // the error is (dx/2)^2 = 1e-4 up to rounding.
            assert!(err <= 1e-4 * (1.0 + 1e-9), "{i}: {err:e}");
        }
    }

    #[test]
    fn abs_conjugate_is_indicator() {
        let g = grid(-4.0, 4.0, 401);
        let p = ConvexPotential::from_fn(g, f64::abs).unwrap();
        let s = legendre_transform(&p, g);
        assert_eq!(s.values(), brute(&p, g).as_slice());
        for i in 0..g.len() {
            let y = g.node(i);
            if y.abs() <= 1.0 {
                assert!(s.values()[i].abs() < 1e-12);
            } else {
                assert!((s.values()[i] - 4.0 * (y.abs() - 1.0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cosh_involution() {
        let g = grid(-2.0, 2.0, 801);
        let p = ConvexPotential::from_fn(g, f64::cosh).unwrap();
        assert!(involution_defect(&p) < 1e-3);
    }

    #[test]
    fn rejects_concave_input() {
        let g = grid(-1.0, 1.0, 33);
        let err = ConvexPotential::from_fn(g, |x| -x * x).unwrap_err();
        assert!(matches!(err, SbbError::NonConvex { .. }));
    }

    #[test]
    fn gradient_examples() {
        let g = grid(-8.0, 8.0, 801);
        let id = gradient_map(&ConvexPotential::from_fn(g, |y| 0.5 * y * y).unwrap());
        let tilt = gradient_map(&ConvexPotential::from_fn(g, |y| 0.5 * y * y + 0.7 * y).unwrap());
        for i in 0..g.len() {
            let y = g.node(i);
            assert!((id.values()[i] - y).abs() < 1e-8);
            assert!((tilt.values()[i] - y - 0.7).abs() < 1e-8);
        }
        let g2 = grid(-2.0, 2.0, 801);
        let cube = gradient_map(&ConvexPotential::from_fn(g2, |y| y.powi(4) / 4.0).unwrap());
        for i in 50..=750 {
            let y = g2.node(i);
            assert!((cube.values()[i] - y.powi(3)).abs() < 1e-3);
        }
    }

    #[test]
    fn flat_potential_gets_strict_gradient() {
        let g = grid(-1.0, 1.0, 32);
        let m = gradient_map(&ConvexPotential::from_fn(g, |_| 3.0).unwrap());
        assert!(m.values().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn invert_examples() {
        let g = grid(-5.0, 5.0, 201);
        let id = MonotoneMap::identity(g);
        let inv = invert_monotone(&id, g);
        for (a, b) in inv.values().iter().zip(id.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let aff = MonotoneMap::from_fn(g, |y| 2.0 * y + 1.0).unwrap();
        let inv = invert_monotone(&aff, g);
        for i in 0..g.len() {
            let x = g.node(i);
            assert!((inv.values()[i] - (x - 1.0) / 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn invert_clamps_outside_range() {
        let g = grid(-1.0, 1.0, 51);
        let half = MonotoneMap::from_fn(g, |y| 0.5 * y).unwrap();
        let inv = invert_monotone(&half, g);
        assert!(inv.values().windows(2).all(|w| w[1] > w[0]));
        assert!((inv.values()[0] + 1.0).abs() < 1e-9);
        assert!((inv.values()[25]).abs() < 1e-12);
    }

    #[test]
    fn order_reversal_on_shifted_input() {
        let g = grid(-3.0, 3.0, 301);
        let p = ConvexPotential::from_fn(g, |x| x * x).unwrap();
        let q = ConvexPotential::from_fn(g, |x| x * x + 0.1 * (x + 3.0)).unwrap();
        let ps = legendre_transform(&p, g);
        let qs = legendre_transform(&q, g);
        assert!(ps.values().iter().zip(qs.values()).all(|(a, b)| a >= b));
    }

    proptest! {
        #[test]
        fn isotonic_repair_is_idempotent(v in prop::collection::vec(-10.0f64..10.0, 2..60)) {
            let mut a = v.clone();
            isotonic_repair(&mut a, STRICT_GAP);
            prop_assert!(a.windows(2).all(|w| w[1] > w[0]));
            let mut b = a.clone();
            isotonic_repair(&mut b, STRICT_GAP);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn isotonic_repair_keeps_strict_input(steps in prop::collection::vec(1e-3f64..1.0, 2..60)) {
            let mut v: Vec<f64> = steps.iter().scan(0.0, |s, d| { *s += d; Some(*s) }).collect();
            let orig = v.clone();
            isotonic_repair(&mut v, STRICT_GAP);
            prop_assert_eq!(v, orig);
        }

        #[test]
        fn legendre_matches_brute_force(
            slopes in prop::collection::vec(-3.0f64..3.0, 4..30),
            c in -5.0f64..5.0,
        ) {
            let g = grid(-4.0, 4.0, 161);
            let mut s = slopes.clone();
            s.sort_by(f64::total_cmp);
            // Convex piecewise-linear function with breakpoints spread over the grid.
            let knots: Vec<f64> = (0..s.len()).map(|k| -4.0 + 8.0 * k as f64 / s.len() as f64).collect();
            let f = |x: f64| {
                let mut v = c;
                for k in 0..s.len() {
                    let lo = knots[k];
                    let hi = if k + 1 < s.len() { knots[k + 1] } else { 4.0 };
                    v += s[k] * (x.min(hi) - lo).max(0.0);
                }
                v
            };
            let p = ConvexPotential::from_fn(g, f).unwrap();
            let star = legendre_transform(&p, g);
            let oracle = brute(&p, g);
            prop_assert_eq!(star.values(), oracle.as_slice());
        }

        #[test]
        fn conjugate_gradient_is_inverse_gradient(a in 0.5f64..2.0, b in -0.5f64..0.5) {
            // Fine primal grid, coarse dual grid: the conjugate is exact up to
            // O(dx^2), so its difference quotient over dy stays accurate.
            let g = grid(-4.0, 4.0, 4001);
            let p = ConvexPotential::from_fn(g, |x| 0.5 * a * x * x + b * x + 0.05 * (x * 0.7).cosh()).unwrap();
            let dual = grid(-1.5, 1.5, 101);
            let gp_star = gradient_map(&legendre_transform(&p, dual));
            let inv = invert_monotone(&gradient_map(&p), dual);
            // Interior dual nodes only: the end nodes use a one-sided difference.
            for i in 1..100 {
                prop_assert!((gp_star.values()[i] - inv.values()[i]).abs() < 1e-4, "{i}: {} vs {}", gp_star.values()[i], inv.values()[i]);
            }
        }
    }
}
