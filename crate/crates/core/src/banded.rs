//! Banded complex linear solver (Gaussian elimination with partial pivoting).
//!
//! The steady-state systems produced by [`crate::steadystate`] have lower and
//! upper bandwidth `2 D + 2` for a Hilbert dimension `D`, so elimination costs
//! `O(N kl (kl + ku))` instead of `O(N³)`. Row swaps widen the upper band to
//! `kl + ku`, which the storage reserves up front.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![Complex64::new(0.0, 0.0); n * width] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, row: usize, col: usize) -> usize {
        debug_assert!(col + self.kl >= row && col <= row + self.kl + self.ku);
        row * self.width + (col + self.kl - row)
    }

    /// Adds `v` to entry `(row, col)`. Panics if the entry lies outside the
    /// declared band.
    pub fn add(&mut self, row: usize, col: usize, v: Complex64) {
        assert!(
            col + self.kl >= row && col <= row + self.ku,
            "entry ({row}, {col}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(row, col);
        self.data[s] += v;
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        if col + self.kl < row || col > row + self.kl + self.ku {
            return Complex64::new(0.0, 0.0);
        }
        self.data[self.slot(row, col)]
    }

    /// Solves `A x = b`, consuming the matrix.
    pub fn solve(mut self, mut b: Vec<Complex64>) -> Result<Vec<Complex64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::SolverFailure(format!("rhs length {} != {}", b.len(), n)));
        }
        let scale = self.data.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return Err(Error::SolverFailure("zero matrix".into()));
        }
        let tiny = scale * f64::EPSILON * 1e-4;
        let reach = self.kl + self.ku;

        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + reach).min(n - 1);

            let mut pivot = k;
            let mut best = self.get(k, k).norm();
            for i in k + 1..=last_row {
                let v = self.get(i, k).norm();
                if v > best {
                    best = v;
                    pivot = i;
                }
            }
            if best <= tiny {
                return Err(Error::SolverFailure(format!(
                    "singular system: pivot {best:e} at column {k} (scale {scale:e})"
                )));
            }
            if pivot != k {
                for j in k..=last_col {
                    let (sk, sp) = (self.slot(k, j), self.slot(pivot, j));
                    self.data.swap(sk, sp);
                }
                b.swap(k, pivot);
            }

            let inv = 1.0 / self.data[self.slot(k, k)];
            for i in k + 1..=last_row {
                let si = self.slot(i, k);
                let f = self.data[si] * inv;
                if f == Complex64::new(0.0, 0.0) {
                    continue;
                }
                self.data[si] = Complex64::new(0.0, 0.0);
                for j in k + 1..=last_col {
                    let upper = self.data[self.slot(k, j)];
                    let s = self.slot(i, j);
                    self.data[s] -= f * upper;
                }
                let bk = b[k];
                b[i] -= f * bk;
            }
        }

        for k in (0..n).rev() {
            let last_col = (k + reach).min(n - 1);
            let mut acc = b[k];
            for j in k + 1..=last_col {
                acc -= self.data[self.slot(k, j)] * b[j];
            }
            b[k] = acc / self.data[self.slot(k, k)];
        }
        Ok(b)
    }
}
