//! Small direct solvers for the coarse label generators.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Solves a tridiagonal system by the Thomas algorithm.
///
/// `lower[i]` multiplies `x[i]` in row `i + 1`, `upper[i]` multiplies
/// `x[i + 1]` in row `i`.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    if rhs.len() != n || lower.len() + 1 != n.max(1) || upper.len() + 1 != n.max(1) {
        return Err(Error::Shape(format!(
            "tridiagonal system of size {n} with off-diagonals {}/{} and rhs {}",
            lower.len(),
            upper.len(),
            rhs.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    for i in 0..n {
        if i > 0 {
            pivot = diag[i] - lower[i - 1] * c[i - 1];
        }
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::Singular(format!("zero pivot in row {i}")));
        }
        if i + 1 < n {
            c[i] = upper[i] / pivot;
        }
        d[i] = if i == 0 {
            rhs[0] / pivot
        } else {
            (rhs[i] - lower[i - 1] * d[i - 1]) / pivot
        };
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Symmetric positive-definite band matrix stored by lower diagonals:
/// `band[k][i]` is entry `(i + k, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBand {
    n: usize,
    band: Vec<Vec<f64>>,
}

impl SymBand {
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        let band = (0..=half_bandwidth)
            .map(|k| vec![0.0; n.saturating_sub(k)])
            .collect();
        SymBand { n, band }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.band.len() - 1
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = r - c;
        if k < self.band.len() {
            self.band[k][c]
        } else {
            0.0
        }
    }

    /// Adds to the symmetric pair `(i, j)` and `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let k = r - c;
        if r >= self.n || k >= self.band.len() {
            return Err(Error::Shape(format!("entry ({i}, {j}) outside the band")));
        }
        self.band[k][c] += value;
        Ok(())
    }

    /// Band Cholesky factorisation followed by two triangular solves.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if rhs.len() != n {
            return Err(Error::Shape(format!(
                "rhs length {} for size {n}",
                rhs.len()
            )));
        }
        let w = self.half_bandwidth();
        // l[k][j] = L(j + k, j)
        let mut l = self.band.clone();
        for j in 0..n {
            let mut d = l[0][j];
            for k in 1..=w.min(j) {
                let v = l[k][j - k];
                d -= v * v;
            }
            if !(d > 0.0) {
                return Err(Error::Singular(format!(
                    "matrix not positive definite at row {j}"
                )));
            }
            let d = math::sqrt(d);
            l[0][j] = d;
            for k in 1..=w.min(n - 1 - j) {
                let mut s = l[k][j];
                for m in 1..=w.min(j) {
                    if k + m <= w {
                        s -= l[k + m][j - m] * l[m][j - m];
                    }
                }
                l[k][j] = s / d;
            }
        }
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 1..=w.min(i) {
                s -= l[k][i - k] * y[i - k];
            }
            y[i] = s / l[0][i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in 1..=w.min(n - 1 - i) {
                s -= l[k][i] * y[i + k];
            }
            y[i] = s / l[0][i];
        }
        Ok(y)
    }
}
