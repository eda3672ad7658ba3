//! Small dense-band solvers used by the density reconstruction and the
//! terminal Newton step.

use crate::error::{Result, SbbError};

/// Thomas algorithm for a tridiagonal system. `sub[0]` and `sup[n-1]` are
/// ignored. Intended for diagonally dominant matrices (no pivoting).
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if sub.len() != n || sup.len() != n || rhs.len() != n {
        return Err(SbbError::Singular("tridiagonal operand lengths differ".into()));
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(SbbError::Singular("zero pivot in tridiagonal solve".into()));
    }
    c[0] = sup[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - sub[i] * c[i - 1];
        if denom == 0.0 {
            return Err(SbbError::Singular("zero pivot in tridiagonal solve".into()));
        }
        c[i] = if i + 1 < n { sup[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals, factorised by
/// Gaussian elimination with partial pivoting. Storage reserves `kl` extra
/// super-diagonals for pivoting fill-in.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        let off = j as isize - i as isize + self.kl as isize;
        if off < 0 || off as usize >= self.width || j >= self.n {
            None
        } else {
            Some(i * self.width + off as usize)
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.idx(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Add `v` to entry `(i, j)`; panics if the entry is outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let off = j as isize - i as isize;
        assert!(
            off >= -(self.kl as isize) && off <= self.ku as isize,
            "entry ({i}, {j}) outside band"
        );
        let k = self.idx(i, j).expect("band index");
        self.data[k] += v;
    }

    /// Solve `A x = b`, consuming the matrix.
    pub fn solve(mut self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(SbbError::Singular("right-hand side length mismatch".into()));
        }
        let mut x = b.to_vec();
        let scale = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= scale * 1e-300 || best == 0.0 {
                return Err(SbbError::Singular(format!("zero pivot at column {k}")));
            }
            let last_col = (k + self.kl + self.ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.get(k, j);
                    let c = self.get(p, j);
                    if let Some(ik) = self.idx(k, j) {
                        self.data[ik] = c;
                    }
                    if let Some(ip) = self.idx(p, j) {
                        self.data[ip] = a;
                    }
                }
                x.swap(k, p);
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last_row {
                let f = self.get(i, k) / pivot;
                if f == 0.0 {
                    continue;
                }
                for j in k..=last_col {
                    let v = self.get(k, j);
                    if v != 0.0 {
                        let ij = self.idx(i, j).expect("fill-in inside band");
                        self.data[ij] -= f * v;
                    }
                }
                x[i] -= f * x[k];
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + self.kl + self.ku).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=last_col {
                s -= self.get(k, j) * x[j];
            }
            x[k] = s / self.get(k, k);
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum())
            .collect()
    }

    #[test]
    fn tridiagonal_matches_dense_product() {
        let n = 20;
        let sub = vec![1.0; n];
        let diag = vec![6.0; n];
        let sup = vec![1.0; n];
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] = diag[i] * x_true[i];
            if i > 0 {
                rhs[i] += sub[i] * x_true[i - 1];
            }
            if i + 1 < n {
                rhs[i] += sup[i] * x_true[i + 1];
            }
        }
        let x = solve_tridiagonal(&sub, &diag, &sup, &rhs).unwrap();
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn band_solve_needs_pivoting() {
        // Zero on the diagonal forces a row swap.
        let n = 12;
        let mut dense = vec![vec![0.0; n]; n];
        let mut m = BandMatrix::zeros(n, 2, 2);
        for i in 0..n {
            for j in i.saturating_sub(2)..(i + 3).min(n) {
                let v = if i == j {
                    if i % 3 == 0 {
                        0.0
                    } else {
                        2.0
                    }
                } else {
                    1.0 / (1.0 + (i + 2 * j) as f64)
                };
                dense[i][j] = v;
                m.add(i, j, v);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let b = dense_mul(&dense, &x_true);
        let x = m.solve(&b).unwrap();
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() < 1e-10, "{i}: {} vs {}", x[i], x_true[i]);
        }
    }

    #[test]
    fn singular_band_is_reported() {
        let m = BandMatrix::zeros(5, 1, 1);
        assert!(m.solve(&[1.0; 5]).is_err());
    }
}
