//! Banded symmetric storage and Cholesky factorization for the FEM systems.
//!
//! Row-major grid numbering keeps every element's nodes within
//! `grid_lines + 1` indices of each other, so the stiffness matrix is banded
//! and a dense band Cholesky is both exact and fast at this mesh size.

use crate::error::{Error, Result};

/// Lower band of a symmetric matrix: row `i` stores columns `i - bw ..= i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSym {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Symmetric access; entries outside the band are zero.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.offset(i, j)]
        }
    }

    /// Adds `v` to the symmetric pair (i, j) / (j, i).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) outside bandwidth {}", self.bw);
        let o = self.offset(i, j);
        self.data[o] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let o = self.offset(i, j);
        self.data[o] = v;
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let start = lo + self.bw - i;
            let mut acc = 0.0;
            for (k, j) in (lo..i).enumerate() {
                let a = row[start + k];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc + row[self.bw] * x[i];
        }
        y
    }

    /// Zeroes row and column `k` and puts 1 on the diagonal.
    pub fn pin(&mut self, k: usize) {
        let lo = k.saturating_sub(self.bw);
        for j in lo..k {
            self.set(k, j, 0.0);
        }
        let hi = (k + self.bw).min(self.n - 1);
        for i in k + 1..=hi {
            self.set(i, k, 0.0);
        }
        self.set(k, k, 1.0);
    }

    pub fn cholesky(&self) -> Result<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        let stride = bw + 1;
        let mut l = self.data.clone();
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let (ri, rj) = (i * stride + bw - i, j * stride + bw - j);
                let mut sum = l[ri + j];
                for k in lo..j {
                    sum -= l[ri + k] * l[rj + k];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::SingularSystem(format!(
                            "non-positive pivot {sum:e} at row {i}"
                        )));
                    }
                    l[ri + i] = sum.sqrt();
                } else {
                    l[ri + j] = sum / l[rj + j];
                }
            }
        }
        Ok(BandCholesky { n, bw, l })
    }
}

/// `L` factor of a banded symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let stride = bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let ri = i * stride + bw - i;
            let mut s = x[i];
            for k in lo..i {
                s -= self.l[ri + k] * x[k];
            }
            x[i] = s / self.l[ri + i];
        }
        for i in (0..n).rev() {
            let ri = i * stride + bw - i;
            x[i] /= self.l[ri + i];
            let xi = x[i];
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                x[k] -= self.l[ri + k] * xi;
            }
        }
    }
}
