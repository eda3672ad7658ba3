//! Numerical solver for the one-dimensional Schrödinger–Bass bridge.
//!
//! Given marginals `mu0`, `muT` on a uniform grid and a penalty `beta > 0`,
//! [`solve`] computes the space-time harmonic potential `h`, the increasing
//! stretching maps between the bridge coordinate `y` and the state `x`, the
//! optimal drift and volatility fields, and the interpolating marginals.
//! The classical Schrödinger bridge and the Bass martingale are available as
//! limiting modes, and [`sde`] checks a solution by Monte-Carlo simulation.

// `!(x > 0.0)` is used on purpose so NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod convex;
pub mod error;
pub mod exec;
pub mod grid;
pub mod heat;
pub mod io;
pub mod linalg;
pub mod maps;
pub mod measure;
pub mod sde;
pub mod solver;

pub use convex::{
    gradient_map, involution_defect, invert_monotone, isotonic_repair, legendre_transform,
    ConvexPotential, MonotoneMap,
};
pub use error::{Result, SbbError};
pub use exec::Execution;
pub use grid::Grid1D;
pub use heat::{
    propagate_backward_log, propagate_forward, semigroup_check, BoundaryMode, LogHeatPotential,
};
pub use maps::{coefficients, consistency_check, x_map, y_map, ConsistencyReport, ProcessCoefficients};
pub use measure::{
    log_density_ratio, make_gaussian, make_mixture, make_uniform, pushforward_monotone,
    quantile_function, wasserstein2, Measure1D,
};
pub use solver::{
    hjb_residual, ma_residual, primal_dual_gap, solve, solve_bass, solve_schrodinger, Mode,
    Nu0Policy, SbbSolution, SolverConfig,
};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
