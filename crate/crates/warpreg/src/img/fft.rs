//! Small 2D FFT wrapper used for exact linear convolution with large or
//! non-separable filters.

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Cached row/column FFT plans for an `m x n` complex grid.
pub struct Fft2 {
    m: usize,
    n: usize,
    fwd_rows: Arc<dyn Fft<f64>>,
    inv_rows: Arc<dyn Fft<f64>>,
    fwd_cols: Arc<dyn Fft<f64>>,
    inv_cols: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(m: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            m,
            n,
            fwd_rows: planner.plan_fft_forward(n),
            inv_rows: planner.plan_fft_inverse(n),
            fwd_cols: planner.plan_fft_forward(m),
            inv_cols: planner.plan_fft_inverse(m),
        }
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn alloc(&self) -> Vec<Complex<f64>> {
        vec![Complex::new(0.0, 0.0); self.m * self.n]
    }

    /// In-place forward transform of a row-major `m x n` grid.
    pub fn forward(&self, grid: &mut [Complex<f64>]) {
        assert_eq!(grid.len(), self.m * self.n);
        self.fwd_rows.process(grid);
        let mut t = transpose(grid, self.m, self.n);
        self.fwd_cols.process(&mut t);
        transpose_into(&t, self.n, self.m, grid);
    }

    /// In-place inverse transform, normalized by `1 / (m n)`.
    pub fn inverse(&self, grid: &mut [Complex<f64>]) {
        assert_eq!(grid.len(), self.m * self.n);
        self.inv_rows.process(grid);
        let mut t = transpose(grid, self.m, self.n);
        self.inv_cols.process(&mut t);
        transpose_into(&t, self.n, self.m, grid);
        let scale = 1.0 / (self.m * self.n) as f64;
        for v in grid.iter_mut() {
            *v *= scale;
        }
    }
}

fn transpose(grid: &[Complex<f64>], m: usize, n: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); m * n];
    transpose_into(grid, m, n, &mut out);
    out
}

fn transpose_into(grid: &[Complex<f64>], m: usize, n: usize, out: &mut [Complex<f64>]) {
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = grid[i * n + j];
        }
    }
}

/// Smallest 5-smooth integer >= n (keeps rustfft on fast code paths).
pub fn next_fast_len(n: usize) -> usize {
    let mut k = n.max(1);
    loop {
        let mut r = k;
        for f in [2usize, 3, 5] {
            while r % f == 0 {
                r /= f;
            }
        }
        if r == 1 {
            return k;
        }
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let fft = Fft2::new(6, 10);
        let mut grid = fft.alloc();
        for (idx, v) in grid.iter_mut().enumerate() {
            *v = Complex::new((idx as f64 * 0.37).sin(), 0.0);
        }
        let orig = grid.clone();
        fft.forward(&mut grid);
        fft.inverse(&mut grid);
        for (a, b) in grid.iter().zip(orig.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn fast_len() {
        assert_eq!(next_fast_len(1), 1);
        assert_eq!(next_fast_len(17), 18);
        assert_eq!(next_fast_len(240), 240);
        assert_eq!(next_fast_len(241), 243);
    }
}
