use serde::{Deserialize, Serialize};

use crate::error::{Result, SbbError};

/// Smallest node count accepted by [`Grid1D::new`].
pub const MIN_NODES: usize = 16;

/// Uniform grid on `[x_min, x_max]` with `n` nodes, both ends included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct GridSpec {
    x_min: f64,
    x_max: f64,
    n: usize,
}

impl TryFrom<GridSpec> for Grid1D {
    type Error = SbbError;
    fn try_from(s: GridSpec) -> Result<Self> {
        Grid1D::new(s.x_min, s.x_max, s.n)
    }
}

impl From<Grid1D> for GridSpec {
    fn from(g: Grid1D) -> Self {
        GridSpec {
            x_min: g.x_min,
            x_max: g.x_max,
            n: g.n,
        }
    }
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !x_min.is_finite() || !x_max.is_finite() {
            return Err(SbbError::InvalidGrid("bounds must be finite".into()));
        }
        if x_min >= x_max {
            return Err(SbbError::InvalidGrid(format!(
                "x_min ({x_min}) must be below x_max ({x_max})"
            )));
        }
        if n < MIN_NODES {
            return Err(SbbError::InvalidGrid(format!(
                "need at least {MIN_NODES} nodes, got {n}"
            )));
        }
        Ok(Grid1D { x_min, x_max, n })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.x_max
        } else {
            self.x_min + i as f64 * self.dx()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Trapezoidal quadrature weights.
    pub fn weights(&self) -> Vec<f64> {
        let dx = self.dx();
        let mut w = vec![dx; self.n];
        w[0] = 0.5 * dx;
        w[self.n - 1] = 0.5 * dx;
        w
    }

    /// Cell index `i` and offset `s = x - node(i)` with `i` clamped to
    /// `0..n-1`; `s` may be negative or exceed `dx` outside the grid.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let dx = self.dx();
        let raw = ((x - self.x_min) / dx).floor();
        let i = if raw < 0.0 {
            0
        } else if raw as usize >= self.n - 1 {
            self.n - 2
        } else {
            raw as usize
        };
        (i, x - self.node(i))
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Linear interpolation of nodal `values` at `x`, extrapolating linearly
    /// from the end cells.
    pub fn interp(&self, values: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        let (i, s) = self.locate(x);
        let t = s / self.dx();
        values[i] + (values[i + 1] - values[i]) * t
    }

    /// Same as [`interp`](Self::interp) but constant beyond the ends.
    pub fn interp_clamped(&self, values: &[f64], x: f64) -> f64 {
        if x <= self.x_min {
            values[0]
        } else if x >= self.x_max {
            values[self.n - 1]
        } else {
            self.interp(values, x)
        }
    }

    /// Trapezoidal integral of nodal values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        let dx = self.dx();
        let inner: f64 = values[1..self.n - 1].iter().sum();
        dx * (inner + 0.5 * (values[0] + values[self.n - 1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_bounds_and_small_n() {
        assert!(Grid1D::new(1.0, 1.0, 100).is_err());
        assert!(Grid1D::new(2.0, 1.0, 100).is_err());
        assert!(Grid1D::new(0.0, 1.0, 15).is_err());
        assert!(Grid1D::new(f64::NAN, 1.0, 100).is_err());
        assert!(Grid1D::new(0.0, 1.0, 16).is_ok());
    }

    #[test]
    fn nodes_are_uniform_and_hit_both_ends() {
        let g = Grid1D::new(-8.0, 8.0, 401).unwrap();
        assert_eq!(g.node(0), -8.0);
        assert_eq!(g.node(400), 8.0);
        assert!((g.node(200)).abs() < 1e-15);
        let dx = g.dx();
        for i in 1..g.len() {
            assert!((g.node(i) - g.node(i - 1) - dx).abs() < 1e-12);
        }
    }

    #[test]
    fn locate_and_interp() {
        let g = Grid1D::new(0.0, 1.0, 101).unwrap();
        let v: Vec<f64> = g.nodes().iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((g.interp(&v, 0.123) - 1.369).abs() < 1e-12);
        assert!((g.interp(&v, 1.5) - 5.5).abs() < 1e-12);
        assert!((g.interp(&v, -0.5) + 0.5).abs() < 1e-12);
        assert_eq!(g.interp_clamped(&v, 2.0), 4.0);
    }

    #[test]
    fn json_roundtrip_validates() {
        let g = Grid1D::new(-1.0, 2.0, 32).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"x_min":-1.0,"x_max":2.0,"n":32}"#);
        let back: Grid1D = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<Grid1D>(r#"{"x_min":1,"x_max":0,"n":32}"#).is_err());
    }
}
