use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::imaging::Kernel;
use crate::rng;
use crate::scalar::Scalar;

/// Camera-shake-like kernel: a smooth random-walk trajectory, recentered on
/// its centroid and splatted bilinearly into an `size x size` support.
pub fn motion_kernel<T: Scalar>(size: usize, seed: u64) -> Result<Kernel<T>> {
    if size < 5 || size % 2 == 0 {
        return Err(Error::invalid(format!(
            "motion kernel size must be odd and >= 5, got {size}"
        )));
    }
    let mut r = rng::rng(seed);
    let radius = (size / 2) as f64 - 1.0;
    let steps = 8 * size;
    let step_len = 0.9 * radius / size as f64 * 2.5;
    let mut angle = 2.0 * std::f64::consts::PI * r.random::<f64>();
    let mut turn = 0.0f64;
    let mut pos = (0.0f64, 0.0f64);
    let mut points = Vec::with_capacity(steps);
    for _ in 0..steps {
        let z: f64 = StandardNormal.sample(&mut r);
        turn = 0.85 * turn + 0.12 * z;
        angle += turn;
        pos.0 += step_len * angle.cos();
        pos.1 += step_len * angle.sin();
        points.push(pos);
    }
    let n = points.len() as f64;
    let cy = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cx = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut taps = vec![0.0f64; size * size];
    let c = (size / 2) as f64;
    for (py, px) in points {
        let y = (py - cy).clamp(-radius, radius) + c;
        let x = (px - cx).clamp(-radius, radius) + c;
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as usize, x0 as usize);
        taps[y0 * size + x0] += (1.0 - fy) * (1.0 - fx);
        taps[y0 * size + x0 + 1] += (1.0 - fy) * fx;
        taps[(y0 + 1) * size + x0] += fy * (1.0 - fx);
        taps[(y0 + 1) * size + x0 + 1] += fy * fx;
    }
    Kernel::from_taps(size, taps.into_iter().map(T::lit).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_and_deterministic() {
        let a: Kernel<f64> = motion_kernel(19, 3).unwrap();
        let b: Kernel<f64> = motion_kernel(19, 3).unwrap();
        assert_eq!(a, b);
        assert!((a.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Spread over more than a handful of taps, but not a delta.
        let nonzero = a.taps().iter().filter(|&&v| v > 1e-4).count();
        assert!(nonzero > 10, "{nonzero}");
        assert!(motion_kernel::<f64>(4, 0).is_err());
    }
}
