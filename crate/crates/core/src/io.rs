//! On-disk layout of a solution.
//!
//! ```text
//! <dir>/config.json            solver configuration
//! <dir>/potential.json         {grid, times, log_h} with log_h row-major (time x node)
//! <dir>/solution.json          complete solution, read back bit-exactly
//! <dir>/trace.csv              iter,w2_t0,w2_T,dlogh_sup,sigma_min
//! <dir>/marginal_t<t>.csv      x,density
//! <dir>/ylaw_t<t>.csv          y,density
//! <dir>/map_x_t<t>.csv         y,value
//! <dir>/coefficients_t<t>.csv  x,alpha,sigma
//! ```
//!
//! Floats are written with the shortest representation that parses back to
//! the same value.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SbbError};
use crate::grid::Grid1D;
use crate::solver::{SbbSolution, SolverConfig, TraceRecord};

pub const CONFIG_FILE: &str = "config.json";
pub const POTENTIAL_FILE: &str = "potential.json";
pub const SOLUTION_FILE: &str = "solution.json";
pub const TRACE_FILE: &str = "trace.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialFile {
    pub grid: Grid1D,
    pub times: Vec<f64>,
    pub log_h: Vec<f64>,
}

/// File name for a per-time CSV, e.g. `marginal_t0.25.csv`.
pub fn time_file(stem: &str, t: f64) -> String {
    format!("{stem}_t{t}.csv")
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn write_columns(path: &Path, header: &[&str], cols: &[&[f64]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    let n = cols[0].len();
    for i in 0..n {
        w.write_record(cols.iter().map(|c| fmt(c[i])))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a numeric CSV with a header row into columns.
pub fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut cols = vec![Vec::new(); header.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                SbbError::Parse(format!("{}: row {}, column {j}: not a number: {field:?}", path.display(), line + 2))
            })?;
            cols.get_mut(j)
                .ok_or_else(|| SbbError::Parse(format!("{}: row {} has extra fields", path.display(), line + 2)))?
                .push(v);
        }
    }
    Ok((header, cols))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| SbbError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| SbbError::Parse(format!("{}: {e}", path.display())))
}

/// Write the full layout into `dir`, creating it if needed.
pub fn write_solution(sol: &SbbSolution, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(CONFIG_FILE), &sol.config)?;
    write_json(
        &dir.join(POTENTIAL_FILE),
        &PotentialFile {
            grid: *sol.grid(),
            times: sol.times().to_vec(),
            log_h: sol.potential.flattened(),
        },
    )?;
    write_json(&dir.join(SOLUTION_FILE), sol)?;
    write_trace(&sol.trace, &dir.join(TRACE_FILE))?;

    let nodes = sol.grid().nodes();
    for (k, &t) in sol.times().iter().enumerate() {
        write_columns(
            &dir.join(time_file("marginal", t)),
            &["x", "density"],
            &[&nodes, sol.marginals[k].density()],
        )?;
        write_columns(
            &dir.join(time_file("ylaw", t)),
            &["y", "density"],
            &[&nodes, sol.y_laws[k].density()],
        )?;
        write_columns(
            &dir.join(time_file("map_x", t)),
            &["y", "value"],
            &[&nodes, sol.maps_x[k].values()],
        )?;
        let c = &sol.coefficients[k];
        write_columns(
            &dir.join(time_file("coefficients", t)),
            &["x", "alpha", "sigma"],
            &[&nodes, &c.alpha, &c.sigma],
        )?;
    }
    Ok(())
}

pub fn read_solution(dir: &Path) -> Result<SbbSolution> {
    read_json(&dir.join(SOLUTION_FILE))
}

pub fn read_config(dir: &Path) -> Result<SolverConfig> {
    read_json(&dir.join(CONFIG_FILE))
}

pub fn read_potential(dir: &Path) -> Result<PotentialFile> {
    read_json(&dir.join(POTENTIAL_FILE))
}

pub fn write_trace(trace: &[TraceRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "w2_t0", "w2_T", "dlogh_sup", "sigma_min"])?;
    for r in trace {
        w.write_record([
            r.iter.to_string(),
            fmt(r.w2_t0),
            fmt(r.w2_t),
            fmt(r.dlogh_sup),
            fmt(r.sigma_min),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let (header, cols) = read_columns(path)?;
    if header != ["iter", "w2_t0", "w2_T", "dlogh_sup", "sigma_min"] {
        return Err(SbbError::Parse(format!("{}: unexpected header {header:?}", path.display())));
    }
    Ok((0..cols[0].len())
        .map(|i| TraceRecord {
            iter: cols[0][i] as usize,
            w2_t0: cols[1][i],
            w2_t: cols[2][i],
            dlogh_sup: cols[3][i],
            sigma_min: cols[4][i],
        })
        .collect())
}

/// Paths of the per-time files present for time `t`.
pub fn time_files(dir: &Path, t: f64) -> Vec<PathBuf> {
    ["marginal", "ylaw", "map_x", "coefficients"]
        .iter()
        .map(|s| dir.join(time_file(s, t)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_file_names() {
        assert_eq!(time_file("marginal", 0.25), "marginal_t0.25.csv");
        assert_eq!(time_file("map_x", 1.0), "map_x_t1.csv");
    }

    #[test]
    fn trace_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        let trace = vec![
            TraceRecord { iter: 0, w2_t0: 0.1, w2_t: 1.0 / 3.0, dlogh_sup: 1e-300, sigma_min: 0.7 },
            TraceRecord { iter: 1, w2_t0: 2e-17, w2_t: 0.0, dlogh_sup: 5.5, sigma_min: 1.0 },
        ];
        write_trace(&trace, &p).unwrap();
        assert_eq!(read_trace(&p).unwrap(), trace);
    }

    #[test]
    fn bad_number_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "a,b\n1,2\n3,oops\n").unwrap();
        let err = read_columns(&p).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
    }
}
