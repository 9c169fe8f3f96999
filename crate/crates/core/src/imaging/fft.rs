//! Unnormalized forward / normalized inverse 2D DFT on row-major planes.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Scalar;

pub struct Fft2<T: Scalar> {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Scalar> Fft2<T> {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn forward_real(&self, plane: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = plane.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.forward(&mut buf);
        buf
    }

    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, &*self.row_fwd, &*self.col_fwd);
    }

    /// Inverse transform including the `1 / (H W)` factor.
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, &*self.row_inv, &*self.col_inv);
        let scale = T::one() / T::from_usize_lossy(self.height * self.width);
        for v in buf.iter_mut() {
            *v = *v * scale;
        }
    }

    pub fn inverse_real(&self, mut buf: Vec<Complex<T>>) -> Vec<T> {
        self.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    fn transform(&self, buf: &mut [Complex<T>], rows: &dyn Fft<T>, cols: &dyn Fft<T>) {
        assert_eq!(buf.len(), self.height * self.width);
        rows.process(buf);
        let mut column = vec![Complex::new(T::zero(), T::zero()); self.height];
        for x in 0..self.width {
            for (y, c) in column.iter_mut().enumerate() {
                *c = buf[y * self.width + x];
            }
            cols.process(&mut column);
            for (y, c) in column.iter().enumerate() {
                buf[y * self.width + x] = *c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_dft() {
        let (h, w) = (3usize, 4usize);
        let plane: Vec<f64> = (0..h * w).map(|i| ((i * 7) % 5) as f64 - 1.5).collect();
        let fft = Fft2::new(h, w);
        let spec = fft.forward_real(&plane);
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let ang = -2.0
                            * std::f64::consts::PI
                            * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        acc += Complex::new(ang.cos(), ang.sin()) * plane[y * w + x];
                    }
                }
                assert!((acc - spec[u * w + v]).norm() < 1e-12);
            }
        }
        let back = fft.inverse_real(spec);
        for (a, b) in back.iter().zip(&plane) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
