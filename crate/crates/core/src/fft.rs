//! Square two-dimensional FFTs on row-major buffers.

use std::sync::Arc;

use num_complex::Complex64 as c64;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized `Σ_j a_j e^{-2πi r·j/n}`.
    pub fn forward(&self, data: &mut [c64]) {
        self.run(data, &self.forward);
    }

    /// Unnormalized `Σ_r a_r e^{+2πi r·j/n}`.
    pub fn inverse(&self, data: &mut [c64]) {
        self.run(data, &self.inverse);
    }

    fn run(&self, data: &mut [c64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(data.len(), n * n, "buffer is not {n}x{n}");
        plan.process(data);
        transpose(data, n);
        plan.process(data);
        transpose(data, n);
    }
}

fn transpose(data: &mut [c64], n: usize) {
    const B: usize = 32;
    for ib in (0..n).step_by(B) {
        for jb in (ib..n).step_by(B) {
            for i in ib..(ib + B).min(n) {
                let j0 = if ib == jb { i + 1 } else { jb };
                for j in j0..(jb + B).min(n) {
                    data.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

/// Signed frequency of FFT bin `i` on an `n`-point axis, in `[-n/2, n/2)`.
#[inline]
pub fn signed_frequency(i: usize, n: usize) -> i64 {
    let i = i as i64;
    let n = n as i64;
    if i >= n - n / 2 {
        i - n
    } else {
        i
    }
}

/// Bin holding signed frequency `r` on an `n`-point axis.
#[inline]
pub fn bin(r: i64, n: usize) -> usize {
    r.rem_euclid(n as i64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn frequencies() {
        let f: Vec<i64> = (0..6).map(|i| signed_frequency(i, 6)).collect();
        assert_eq!(f, vec![0, 1, 2, -3, -2, -1]);
        let f: Vec<i64> = (0..5).map(|i| signed_frequency(i, 5)).collect();
        assert_eq!(f, vec![0, 1, 2, -2, -1]);
        assert_eq!(bin(-3, 6), 3);
    }

    #[test]
    fn single_mode_and_roundtrip() {
        let n = 12;
        let fft = Fft2::new(n);
        let (r1, r2) = (3i64, -2i64);
        let mut a: Vec<c64> = (0..n * n)
            .map(|idx| {
                let (i, j) = ((idx / n) as f64, (idx % n) as f64);
                c64::from_polar(1.0, 2.0 * PI * (r1 as f64 * i + r2 as f64 * j) / n as f64)
            })
            .collect();
        let orig = a.clone();
        fft.forward(&mut a);
        for (idx, z) in a.iter().enumerate() {
            let want = if idx == bin(r1, n) * n + bin(r2, n) { (n * n) as f64 } else { 0.0 };
            assert!((z - c64::new(want, 0.0)).norm() < 1e-10);
        }
        fft.inverse(&mut a);
        for (x, y) in a.iter().zip(&orig) {
            assert!((x / (n * n) as f64 - y).norm() < 1e-13);
        }
    }

    #[test]
    fn transpose_non_multiple_of_block() {
        let n = 37;
        let mut a: Vec<c64> = (0..n * n).map(|i| c64::new(i as f64, 0.0)).collect();
        transpose(&mut a, n);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(a[i * n + j].re, (j * n + i) as f64);
            }
        }
    }
}
