//! Outer fixed-point iteration and its diagnostics.

mod config;
mod diagnostics;
mod solution;
mod solve;
mod terminal;

pub use config::{Mode, Nu0Policy, SolverConfig};
pub use diagnostics::{
    central_region, field_cost, hjb_residual, ma_residual, primal_dual_gap, DualityGap, MaResidual,
    HJB_REGION_MASS,
};
pub use solution::{SbbSolution, TraceRecord, EDGE_FRACTION, EDGE_MASS_TOL};
pub use solve::{check_convex_order, solve, solve_bass, solve_schrodinger};
