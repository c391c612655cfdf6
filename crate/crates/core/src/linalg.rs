//! Banded LU with partial pivoting.
//!
//! The Newton systems assembled here are sparse with a narrow band once the
//! unknowns are interleaved per cell, so a banded factorisation is a direct
//! solver with O(n·b²) cost.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is numerically singular at column {0}")]
    Singular(usize),
    #[error("entry ({row}, {col}) lies outside the band")]
    OutOfBand { row: usize, col: usize },
}

/// Square matrix with `lower` sub- and `upper` super-diagonals.
///
/// Each row stores `lower + upper + lower + 1` slots so that fill-in from row
/// swaps during factorisation stays in place.
#[derive(Clone, Debug)]
pub struct BandedMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        let width = 2 * lower + upper + 1;
        Self {
            n,
            lower,
            upper,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, row: usize, col: usize) -> usize {
        row * self.width + (col + self.lower - row)
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) -> Result<(), LinalgError> {
        if col + self.lower < row || col > row + self.upper {
            return Err(LinalgError::OutOfBand { row, col });
        }
        let s = self.slot(row, col);
        self.data[s] += value;
        Ok(())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        if col + self.lower < row || col > row + self.upper + self.lower {
            0.0
        } else {
            self.data[self.slot(row, col)]
        }
    }

    /// y = A x (before factorisation).
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.lower);
                let hi = (i + self.upper).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn factor(mut self) -> Result<BandedLu, LinalgError> {
        let n = self.n;
        let kl = self.lower;
        let reach = self.lower + self.upper;
        let mut pivots = vec![0usize; n];
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * f64::EPSILON * 1e-2;

        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for r in k + 1..=last_row {
                let v = self.get(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= tiny || best == 0.0 {
                return Err(LinalgError::Singular(k));
            }
            pivots[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    let (a, b) = (self.slot(k, c), self.slot(p, c));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for r in k + 1..=last_row {
                let s = self.slot(r, k);
                let factor = self.data[s] / pivot;
                self.data[s] = factor;
                if factor == 0.0 {
                    continue;
                }
                for c in k + 1..=last_col {
                    let u = self.data[self.slot(k, c)];
                    let t = self.slot(r, c);
                    self.data[t] -= factor * u;
                }
            }
        }
        Ok(BandedLu { lu: self, pivots })
    }
}

/// Factorised banded matrix, reusable for several right-hand sides.
#[derive(Clone, Debug)]
pub struct BandedLu {
    lu: BandedMatrix,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.lu;
        let n = a.n;
        let kl = a.lower;
        let reach = a.lower + a.upper;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=(k + kl).min(n - 1) {
                    b[r] -= a.data[a.slot(r, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for c in k + 1..=(k + reach).min(n - 1) {
                acc -= a.data[a.slot(k, c)] * b[c];
            }
            b[k] = acc / a.data[a.slot(k, k)];
        }
    }
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
