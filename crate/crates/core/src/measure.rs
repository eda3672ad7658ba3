//! Probability densities on a uniform grid.
//!
//! A [`Measure1D`] stores nodal density values and is read as the piecewise
//! linear density interpolating them. Its CDF is therefore piecewise
//! quadratic, which is what quantiles and pushforwards work with.

use serde::{Deserialize, Serialize};

use crate::convex::MonotoneMap;
use crate::error::{Result, SbbError};
use crate::grid::Grid1D;
use crate::linalg::solve_tridiagonal;

/// Default lower clamp applied to densities before taking logarithms.
pub const DEFAULT_DENSITY_FLOOR: f64 = 1e-300;

/// Probability density sampled at the nodes of a [`Grid1D`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureSpec", into = "MeasureSpec")]
pub struct Measure1D {
    grid: Grid1D,
    density: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeasureSpec {
    grid: Grid1D,
    density: Vec<f64>,
}

impl TryFrom<MeasureSpec> for Measure1D {
    type Error = SbbError;
    fn try_from(s: MeasureSpec) -> Result<Self> {
        Measure1D::from_normalized(s.grid, s.density)
    }
}

impl From<Measure1D> for MeasureSpec {
    fn from(m: Measure1D) -> Self {
        MeasureSpec {
            grid: m.grid,
            density: m.density,
        }
    }
}

impl Measure1D {
    /// Build a measure from non-negative nodal values, renormalising them to
    /// unit trapezoidal mass.
    pub fn new(grid: Grid1D, density: Vec<f64>) -> Result<Self> {
        let mass = validated_mass(&grid, &density)?;
        let density = density.into_iter().map(|d| d / mass).collect();
        Ok(Measure1D { grid, density })
    }

    /// Store already-normalised values as they are, so that serialised
    /// measures round-trip bit for bit. The mass must be 1 within 1e-8.
    pub fn from_normalized(grid: Grid1D, density: Vec<f64>) -> Result<Self> {
        let mass = validated_mass(&grid, &density)?;
        if (mass - 1.0).abs() > 1e-8 {
            return Err(SbbError::InvalidMeasure(format!(
                "density integrates to {mass}, expected 1"
            )));
        }
        Ok(Measure1D { grid, density })
    }

    /// Density proportional to `exp(log_density)`, shifted by its maximum
    /// before exponentiation.
    pub fn from_log_density(grid: Grid1D, log_density: &[f64]) -> Result<Self> {
        let m = log_density
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(SbbError::InvalidMeasure("log-density has no finite maximum".into()));
        }
        Measure1D::new(grid, log_density.iter().map(|l| (l - m).exp()).collect())
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn into_density(self) -> Vec<f64> {
        self.density
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.density)
    }

    /// Trapezoidal expectation of nodal values `f`.
    pub fn expect(&self, f: &[f64]) -> f64 {
        let prod: Vec<f64> = self.density.iter().zip(f).map(|(d, v)| d * v).collect();
        self.grid.integrate(&prod)
    }

    /// Trapezoidal expectation of `f(x)`.
    pub fn expect_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        let vals: Vec<f64> = self.grid.nodes().into_iter().map(f).collect();
        self.expect(&vals)
    }

    pub fn mean(&self) -> f64 {
        self.expect_fn(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expect_fn(|x| (x - m) * (x - m))
    }

    /// Density at `x` by linear interpolation, zero outside the grid.
    pub fn density_at(&self, x: f64) -> f64 {
        if !self.grid.contains(x) {
            0.0
        } else {
            self.grid.interp(&self.density, x)
        }
    }

    /// Exact CDF of the piecewise-linear density at every node, normalised so
    /// that the last entry is 1.
    pub fn cdf_nodes(&self) -> Vec<f64> {
        let dx = self.grid.dx();
        let mut c = Vec::with_capacity(self.density.len());
        c.push(0.0);
        let mut acc = 0.0;
        for w in self.density.windows(2) {
            acc += 0.5 * dx * (w[0] + w[1]);
            c.push(acc);
        }
        let total = acc;
        c.iter_mut().for_each(|v| *v /= total);
        c
    }

    /// CDF at an arbitrary point, 0 below and 1 above the grid.
    pub fn cdf_at(&self, x: f64) -> f64 {
        self.cdf_table().eval(self, x)
    }

    fn cdf_table(&self) -> CdfTable {
        CdfTable {
            c: self.cdf_nodes(),
            total: self.mass(),
        }
    }

    /// Quantile at `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> Result<f64> {
        quantile_function(self, u)
    }

    /// Quantiles at many levels, all in (0, 1), sharing one CDF evaluation.
    pub fn quantiles(&self, us: &[f64]) -> Result<Vec<f64>> {
        let t = self.cdf_table();
        us.iter().map(|&u| t.quantile(self, u)).collect()
    }

    /// Nodal values as `(x, density)` pairs.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.density
            .iter()
            .enumerate()
            .map(|(i, d)| (self.grid.node(i), *d))
    }
}

fn validated_mass(grid: &Grid1D, density: &[f64]) -> Result<f64> {
    if density.len() != grid.len() {
        return Err(SbbError::InvalidMeasure(format!(
            "{} density values for a grid of {} nodes",
            density.len(),
            grid.len()
        )));
    }
    if let Some(i) = density.iter().position(|d| !d.is_finite() || *d < 0.0) {
        return Err(SbbError::InvalidMeasure(format!(
            "density at node {i} is {} (must be finite and non-negative)",
            density[i]
        )));
    }
    let mass = grid.integrate(density);
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(SbbError::InvalidMeasure(format!("total mass is {mass}")));
    }
    Ok(mass)
}

/// Node CDF values plus the trapezoid mass used to normalise them.
struct CdfTable {
    c: Vec<f64>,
    total: f64,
}

impl CdfTable {
    fn eval(&self, m: &Measure1D, x: f64) -> f64 {
        let grid = &m.grid;
        if x <= grid.x_min() {
            return 0.0;
        }
        if x >= grid.x_max() {
            return 1.0;
        }
        let (i, s) = grid.locate(x);
        let d0 = m.density[i] / self.total;
        let slope = (m.density[i + 1] - m.density[i]) / (self.total * grid.dx());
        (self.c[i] + d0 * s + 0.5 * slope * s * s).clamp(0.0, 1.0)
    }

    fn quantile(&self, m: &Measure1D, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(SbbError::OutOfRange {
                what: "quantile level must lie in (0, 1)",
                value: u,
            });
        }
        let n = self.c.len();
        let k = self.c.partition_point(|&c| c <= u);
        let i = k.clamp(1, n - 1) - 1;
        let dx = m.grid.dx();
        let d0 = m.density[i] / self.total;
        let slope = (m.density[i + 1] - m.density[i]) / (self.total * dx);
        let r = (u - self.c[i]).max(0.0);
        // Root of d0*s + slope*s^2/2 = r in the cancellation-free form.
        let disc = (d0 * d0 + 2.0 * slope * r).max(0.0);
        let denom = d0 + disc.sqrt();
        let s = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
        Ok(m.grid.node(i) + s.clamp(0.0, dx))
    }
}

/// Gaussian density restricted to `grid` and renormalised.
pub fn make_gaussian(grid: Grid1D, mean: f64, variance: f64) -> Result<Measure1D> {
    check_gaussian(&grid, mean, variance)?;
    let dens = grid
        .nodes()
        .into_iter()
        .map(|x| gaussian_pdf(x, mean, variance))
        .collect();
    Measure1D::new(grid, dens)
}

/// Finite Gaussian mixture `sum_k w_k N(m_k, v_k)`; weights are normalised.
pub fn make_mixture(grid: Grid1D, components: &[(f64, f64, f64)]) -> Result<Measure1D> {
    if components.is_empty() {
        return Err(SbbError::InvalidMeasure("mixture has no components".into()));
    }
    let wsum: f64 = components.iter().map(|c| c.0).sum();
    for &(w, m, v) in components {
        if !(w > 0.0) || !w.is_finite() {
            return Err(SbbError::InvalidMeasure(format!("mixture weight {w} must be positive")));
        }
        check_gaussian(&grid, m, v)?;
    }
    let dens = grid
        .nodes()
        .into_iter()
        .map(|x| {
            components
                .iter()
                .map(|&(w, m, v)| w / wsum * gaussian_pdf(x, m, v))
                .sum()
        })
        .collect();
    Measure1D::new(grid, dens)
}

/// Uniform density on `[lo, hi]`. Each node carries the fraction of its
/// dual cell covered by the interval, so a jump that lands on a node gets
/// the value 1/2 and the trapezoid mass equals the interval length.
pub fn make_uniform(grid: Grid1D, lo: f64, hi: f64) -> Result<Measure1D> {
    if !(lo < hi) {
        return Err(SbbError::InvalidMeasure(format!("empty interval [{lo}, {hi}]")));
    }
    let h = 0.5 * grid.dx();
    let dens = grid
        .nodes()
        .into_iter()
        .map(|x| {
            let (a, b) = ((x - h).max(grid.x_min()), (x + h).min(grid.x_max()));
            ((b.min(hi) - a.max(lo)).max(0.0) / (b - a)).clamp(0.0, 1.0)
        })
        .collect();
    Measure1D::new(grid, dens)
}

fn check_gaussian(grid: &Grid1D, mean: f64, variance: f64) -> Result<()> {
    if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
        return Err(SbbError::InvalidMeasure(format!(
            "Gaussian needs finite mean and positive variance, got ({mean}, {variance})"
        )));
    }
    let r = 6.0 * variance.sqrt();
    if mean - r < grid.x_min() || mean + r > grid.x_max() {
        return Err(SbbError::DomainTooSmall {
            need_lo: mean - r,
            need_hi: mean + r,
            have_lo: grid.x_min(),
            have_hi: grid.x_max(),
        });
    }
    Ok(())
}

pub(crate) fn gaussian_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let z = x - mean;
    (-(z * z) / (2.0 * variance)).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

/// Quantile of `m` at level `u` in (0, 1), by inverting the exact CDF of the
/// piecewise-linear density.
pub fn quantile_function(m: &Measure1D, u: f64) -> Result<f64> {
    m.cdf_table().quantile(m, u)
}

/// `log(max(num, floor) / max(den, floor))` node by node.
pub fn log_density_ratio(num: &Measure1D, den: &Measure1D, floor: f64) -> Result<Vec<f64>> {
    if num.grid != den.grid {
        return Err(SbbError::GridMismatch);
    }
    if !(floor > 0.0) {
        return Err(SbbError::OutOfRange {
            what: "density floor must be positive",
            value: floor,
        });
    }
    Ok(num
        .density
        .iter()
        .zip(&den.density)
        .map(|(a, b)| a.max(floor).ln() - b.max(floor).ln())
        .collect())
}

/// Quadratic Wasserstein distance through quantile functions, using the
/// midpoint rule on `n_quantiles` levels.
pub fn wasserstein2(a: &Measure1D, b: &Measure1D, n_quantiles: usize) -> Result<f64> {
    if n_quantiles < 100 {
        return Err(SbbError::OutOfRange {
            what: "wasserstein2 needs at least 100 quantile levels",
            value: n_quantiles as f64,
        });
    }
    let us = midpoint_levels(n_quantiles);
    let qa = a.quantiles(&us)?;
    let qb = b.quantiles(&us)?;
    Ok(w2_from_quantiles(&qa, &qb))
}

/// W2 between a grid measure and an empirical sample.
pub fn wasserstein2_empirical(m: &Measure1D, samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(SbbError::InvalidMeasure("empty sample".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let us = midpoint_levels(s.len());
    let q = m.quantiles(&us)?;
    Ok(w2_from_quantiles(&q, &s))
}

/// W2 between two equally weighted empirical samples of any sizes.
pub fn wasserstein2_samples(a: &[f64], b: &[f64], n_quantiles: usize) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let us = midpoint_levels(n_quantiles);
    let pick = |s: &[f64], u: f64| s[((u * s.len() as f64) as usize).min(s.len() - 1)];
    let qa: Vec<f64> = us.iter().map(|&u| pick(&sa, u)).collect();
    let qb: Vec<f64> = us.iter().map(|&u| pick(&sb, u)).collect();
    w2_from_quantiles(&qa, &qb)
}

pub(crate) fn midpoint_levels(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect()
}

fn w2_from_quantiles(qa: &[f64], qb: &[f64]) -> f64 {
    let s: f64 = qa.iter().zip(qb).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / qa.len() as f64).sqrt()
}

/// Image of `m` under the increasing map `map`, sampled on `m`'s grid.
pub fn pushforward_monotone(m: &Measure1D, map: &MonotoneMap) -> Result<Measure1D> {
    pushforward_onto(m, map, *m.grid())
}

/// Image of `m` under `map`, sampled on `target`. Mass mapped outside the
/// target grid is discarded before renormalisation.
pub fn pushforward_onto(m: &Measure1D, map: &MonotoneMap, target: Grid1D) -> Result<Measure1D> {
    if *map.grid() != m.grid {
        return Err(SbbError::GridMismatch);
    }
    map.check_strict()?;
    let cdf = m.cdf_table();
    let vals = map.values();
    let lo = vals[0];
    let hi = vals[vals.len() - 1];
    let cdf_out = |y: f64| {
        if y <= lo {
            0.0
        } else if y >= hi {
            1.0
        } else {
            cdf.eval(m, map.inverse_eval(y))
        }
    };
    measure_from_cdf(target, cdf_out)
}

/// Image of `m` under the inverse of `forward`, where `forward` is given on
/// the target grid and maps it increasingly into `m`'s domain.
pub fn pushforward_inverse(m: &Measure1D, forward: &MonotoneMap) -> Result<Measure1D> {
    forward.check_strict()?;
    let cdf = m.cdf_table();
    measure_from_cdf(*forward.grid(), |y| cdf.eval(m, forward.eval(y)))
}

/// Recover nodal densities whose piecewise-linear interpolant reproduces the
/// dual-cell masses implied by `cdf`. Exact whenever `cdf` is itself the CDF
/// of a piecewise-linear density on `grid`.
pub(crate) fn measure_from_cdf(grid: Grid1D, cdf: impl Fn(f64) -> f64) -> Result<Measure1D> {
    let n = grid.len();
    let dx = grid.dx();
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(grid.x_min());
    for i in 0..n - 1 {
        edges.push(grid.node(i) + 0.5 * dx);
    }
    edges.push(grid.x_max());
    let f: Vec<f64> = edges.iter().map(|&e| cdf(e)).collect();
    let masses: Vec<f64> = f.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();

    let e = dx / 8.0;
    let mut sub = vec![e; n];
    let mut diag = vec![6.0 * e; n];
    let sup = vec![e; n];
    diag[0] = 3.0 * e;
    diag[n - 1] = 3.0 * e;
    sub[0] = 0.0;
    let dens = solve_tridiagonal(&sub, &diag, &sup, &masses)?;
    let dens: Vec<f64> = dens.into_iter().map(|d| d.max(0.0)).collect();
    Measure1D::new(grid, dens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(lo: f64, hi: f64, n: usize) -> Grid1D {
        Grid1D::new(lo, hi, n).unwrap()
    }

    #[test]
    fn gaussian_peak_and_mass() {
        let m = make_gaussian(g(-8.0, 8.0, 401), 0.0, 1.0).unwrap();
        assert!((m.density()[200] - 0.398_942_280_401_432_7).abs() < 1e-6);
        assert!((m.mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_domain_too_small() {
        let err = make_gaussian(g(-1.0, 1.0, 101), 0.0, 4.0).unwrap_err();
        assert!(matches!(err, SbbError::DomainTooSmall { .. }));
    }

    #[test]
    fn rejects_negative_density() {
        let grid = g(0.0, 1.0, 16);
        let mut d = vec![1.0; 16];
        d[3] = -0.1;
        assert!(Measure1D::new(grid, d).is_err());
        assert!(Measure1D::new(grid, vec![0.0; 16]).is_err());
    }

    #[test]
    fn identity_pushforward_is_exact() {
        let m = make_gaussian(g(-8.0, 8.0, 401), 0.0, 1.0).unwrap();
        let id = MonotoneMap::identity(*m.grid());
        let p = pushforward_monotone(&m, &id).unwrap();
        for (a, b) in p.density().iter().zip(m.density()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_map_gives_wider_gaussian() {
        let grid = g(-12.0, 12.0, 801);
        let m = make_gaussian(grid, 0.0, 1.0).unwrap();
        let map = MonotoneMap::from_fn(grid, |y| 2.0 * y).unwrap();
        let p = pushforward_monotone(&m, &map).unwrap();
        let want = make_gaussian(grid, 0.0, 4.0).unwrap();
        let err = p
            .density()
            .iter()
            .zip(want.density())
            .fold(0.0_f64, |e, (a, b)| e.max((a - b).abs()));
        assert!(err < 1e-4, "sup error {err}");
    }

    #[test]
    fn square_map_on_positive_grid() {
        let src = g(0.01, 1.0, 2001);
        let m = make_uniform(src, 0.01, 1.0).unwrap();
        let map = MonotoneMap::from_fn(src, |y| y * y).unwrap();
        let target = g(1e-4, 1.0, 4001);
        let p = pushforward_onto(&m, &map, target).unwrap();
        // Image density of the uniform law on [0.01, 1] under y^2.
        for i in 0..target.len() {
            let x = target.node(i);
            if x > 0.05 && x < 0.99 {
                let want = 1.0 / (2.0 * x.sqrt() * 0.99);
                assert!((p.density()[i] - want).abs() < 1e-3, "x={x}");
            }
        }
    }

    #[test]
    fn log_ratio_examples() {
        let grid = g(-10.0, 10.0, 801);
        let a = make_gaussian(grid, 0.0, 2.0).unwrap();
        let b = make_gaussian(grid, 0.0, 1.0).unwrap();
        let r = log_density_ratio(&a, &a, 1e-300).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
        let r = log_density_ratio(&a, &b, 1e-300).unwrap();
        assert!((r[400] - (0.5_f64).sqrt().ln()).abs() < 1e-6);

        let c = make_gaussian(grid, 1.0, 1.0).unwrap();
        let r = log_density_ratio(&c, &b, 1e-300).unwrap();
        for i in 200..=600 {
            let x = grid.node(i);
            assert!((r[i] - (x - 0.5)).abs() < 1e-6);
        }
        let other = make_gaussian(g(-9.0, 9.0, 801), 0.0, 1.0).unwrap();
        assert_eq!(log_density_ratio(&a, &other, 1e-300), Err(SbbError::GridMismatch));
    }

    #[test]
    fn w2_examples() {
        let grid = g(-13.0, 13.0, 1301);
        let a = make_gaussian(grid, 0.0, 1.0).unwrap();
        let b = make_gaussian(grid, 3.0, 1.0).unwrap();
        let c = make_gaussian(grid, 0.0, 4.0).unwrap();
        assert!(wasserstein2(&a, &a, 1000).unwrap() < 1e-10);
        assert!((wasserstein2(&a, &b, 1000).unwrap() - 3.0).abs() < 1e-3);
        assert!((wasserstein2(&a, &c, 1000).unwrap() - 1.0).abs() < 1e-3);
        assert!(wasserstein2(&a, &c, 10).is_err());
    }

    #[test]
    fn quantile_examples() {
        let m = make_gaussian(g(-8.0, 8.0, 801), 0.0, 1.0).unwrap();
        assert!(m.quantile(0.5).unwrap().abs() < 1e-6);
        assert!((m.quantile(0.8413).unwrap() - 1.0).abs() < 1e-3);
        let u = make_uniform(g(0.0, 1.0, 101), 0.0, 1.0).unwrap();
        assert!((u.quantile(0.25).unwrap() - 0.25).abs() < 1e-6);
        assert!(m.quantile(0.0).is_err());
        assert!(m.quantile(1.0).is_err());
        assert!(m.quantile(f64::NAN).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        let m = make_mixture(g(-10.0, 10.0, 401), &[(0.3, -2.0, 0.5), (0.7, 1.0, 1.5)]).unwrap();
        for k in 1..100 {
            let u = k as f64 / 100.0;
            let x = m.quantile(u).unwrap();
            assert!((m.cdf_at(x) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let m = make_gaussian(g(-8.0, 8.0, 65), 0.3, 1.1).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: Measure1D = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
