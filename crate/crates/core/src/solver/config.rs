use serde::{Deserialize, Serialize};

use crate::error::{Result, SbbError};
use crate::exec::Execution;
use crate::grid::Grid1D;
use crate::measure::{Measure1D, DEFAULT_DENSITY_FLOOR};

/// Which system the solver iterates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Finite-beta bridge with stretching maps.
    #[default]
    Sbb,
    /// Classical Schrödinger bridge: identity maps, unit volatility.
    SchrodingerLimit,
    /// Bass martingale: constant potential, maps carried by the convex
    /// stretching potential alone.
    BassLimit,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sbb => "sbb",
            Mode::SchrodingerLimit => "schrodinger_limit",
            Mode::BassLimit => "bass_limit",
        }
    }
}

/// Starting guess for the initial law of the bridge coordinate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nu0Policy {
    #[default]
    MatchMu0,
    StandardGaussian,
    Custom(Measure1D),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub beta: f64,
    pub horizon_t: f64,
    pub grid: Grid1D,
    #[serde(default = "defaults::max_iters")]
    pub max_iters: usize,
    #[serde(default = "defaults::tol_marginal")]
    pub tol_marginal: f64,
    #[serde(default = "defaults::damping")]
    pub damping: f64,
    #[serde(default = "defaults::density_floor")]
    pub density_floor: f64,
    #[serde(default)]
    pub nu0_policy: Nu0Policy,
    pub output_times: Vec<f64>,
    #[serde(default)]
    pub mode: Mode,
    /// Stop early once the sup-norm change of `log h(T, .)` between sweeps
    /// falls below this value.
    #[serde(default = "defaults::stall_tol")]
    pub stall_tol: f64,
    #[serde(default)]
    pub execution: Execution,
}

mod defaults {
    pub fn max_iters() -> usize {
        2000
    }
    pub fn tol_marginal() -> f64 {
        1e-3
    }
    pub fn damping() -> f64 {
        1.0
    }
    pub fn density_floor() -> f64 {
        super::DEFAULT_DENSITY_FLOOR
    }
    pub fn stall_tol() -> f64 {
        1e-7
    }
}

impl SolverConfig {
    /// Defaults with output times `0, T/4, T/2, 3T/4, T`.
    pub fn new(beta: f64, horizon_t: f64, grid: Grid1D) -> Self {
        SolverConfig {
            beta,
            horizon_t,
            grid,
            max_iters: defaults::max_iters(),
            tol_marginal: defaults::tol_marginal(),
            damping: defaults::damping(),
            density_floor: defaults::density_floor(),
            nu0_policy: Nu0Policy::default(),
            output_times: (0..=4).map(|k| horizon_t * k as f64 / 4.0).collect(),
            mode: Mode::default(),
            stall_tol: defaults::stall_tol(),
            execution: Execution::default(),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_output_times(mut self, times: Vec<f64>) -> Self {
        self.output_times = times;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(SbbError::InvalidConfig { field, reason });
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad("beta", format!("must be positive and finite, got {}", self.beta));
        }
        if !(self.horizon_t > 0.0) || !self.horizon_t.is_finite() {
            return bad("horizon_t", format!("must be positive and finite, got {}", self.horizon_t));
        }
        if self.max_iters == 0 {
            return bad("max_iters", "must be at least 1".into());
        }
        if !(self.tol_marginal > 0.0) {
            return bad("tol_marginal", format!("must be positive, got {}", self.tol_marginal));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("damping", format!("must lie in (0, 1], got {}", self.damping));
        }
        if !(self.density_floor > 0.0) {
            return bad("density_floor", format!("must be positive, got {}", self.density_floor));
        }
        if !(self.stall_tol >= 0.0) {
            return bad("stall_tol", format!("must be non-negative, got {}", self.stall_tol));
        }
        let t = &self.output_times;
        if t.len() < 2 || t[0] != 0.0 || *t.last().unwrap() != self.horizon_t {
            return bad("output_times", "must start at 0 and end at horizon_t".into());
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("output_times", "must be strictly increasing".into());
        }
        if let Nu0Policy::Custom(m) = &self.nu0_policy {
            if *m.grid() != self.grid {
                return bad("nu0_policy", "custom measure lives on a different grid".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SolverConfig {
        SolverConfig::new(1.0, 1.0, Grid1D::new(-5.0, 5.0, 101).unwrap())
    }

    #[test]
    fn default_config_is_valid() {
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn field_errors_name_the_field() {
        let mut c = cfg();
        c.beta = -1.0;
        assert!(matches!(c.validate(), Err(SbbError::InvalidConfig { field: "beta", .. })));
        let mut c = cfg();
        c.output_times = vec![0.0, 0.5];
        assert!(matches!(c.validate(), Err(SbbError::InvalidConfig { field: "output_times", .. })));
        let mut c = cfg();
        c.damping = 0.0;
        assert!(matches!(c.validate(), Err(SbbError::InvalidConfig { field: "damping", .. })));
    }

    #[test]
    fn json_roundtrip() {
        let c = cfg().with_mode(Mode::BassLimit);
        let s = serde_json::to_string(&c).unwrap();
        let back: SolverConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
