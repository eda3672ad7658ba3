//! The `compare` command: distances between two solution directories.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use sbb_core::io::read_solution;
use sbb_core::solver::central_region;
use sbb_core::{wasserstein2, SbbSolution};

/// Mass of the first solution's bridge law over which `map_sup_central` is
/// taken.
pub const CENTRAL_MASS: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeDistances {
    pub t: f64,
    pub marginal_w2: f64,
    /// Sup-norm distance between the maps `X(t, .)` over the whole grid.
    pub map_sup: f64,
    /// The same over the central [`CENTRAL_MASS`] of the first bridge law.
    pub map_sup_central: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub a: String,
    pub b: String,
    pub times: Vec<TimeDistances>,
}

fn load(dir: &Path) -> Result<SbbSolution> {
    read_solution(dir).with_context(|| format!("reading solution layout in {}", dir.display()))
}

pub fn compare(a: &Path, b: &Path) -> Result<Report> {
    let (sa, sb) = (load(a)?, load(b)?);
    if sa.grid() != sb.grid() {
        bail!("layout mismatch: grids differ ({:?} vs {:?})", sa.grid(), sb.grid());
    }
    if sa.times() != sb.times() {
        bail!("layout mismatch: output times differ ({:?} vs {:?})", sa.times(), sb.times());
    }
    let g = *sa.grid();
    let mut times = Vec::new();
    for (k, &t) in sa.times().iter().enumerate() {
        let (xa, xb) = (sa.maps_x[k].values(), sb.maps_x[k].values());
        let (lo, hi) = central_region(&sa.y_laws[k], CENTRAL_MASS)?;
        let dist = |i: usize| (xa[i] - xb[i]).abs();
        times.push(TimeDistances {
            t,
            marginal_w2: wasserstein2(&sa.marginals[k], &sb.marginals[k], 1000)?,
            map_sup: (0..g.len()).map(dist).fold(0.0, f64::max),
            map_sup_central: (0..g.len())
                .filter(|&i| (lo..=hi).contains(&g.node(i)))
                .map(dist)
                .fold(0.0, f64::max),
        });
    }
    Ok(Report {
        a: a.display().to_string(),
        b: b.display().to_string(),
        times,
    })
}

impl Report {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:>10} {:>14} {:>14} {:>16}\n", "t", "marginal_w2", "map_sup", "map_sup_central");
        for d in &self.times {
            s.push_str(&format!(
                "{:>10} {:>14.6e} {:>14.6e} {:>16.6e}\n",
                d.t, d.marginal_w2, d.map_sup, d.map_sup_central
            ));
        }
        s
    }
}
