use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::Kernel;
use crate::rng;
use crate::scalar::Scalar;

/// Parameters of one anisotropic Gaussian degradation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlurConfig {
    /// Standard deviation along the axis at angle `theta`.
    pub sigma_major: f64,
    /// Standard deviation along the perpendicular axis.
    pub sigma_minor: f64,
    /// Orientation in radians, `[0, 2 pi)` when sampled.
    pub theta: f64,
    /// Additive white noise level applied after blurring.
    pub noise_sigma: f64,
    /// Odd kernel side length.
    pub support: usize,
}

fn round_up_odd(v: f64) -> usize {
    let n = v.ceil().max(1.0) as usize;
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

/// Smallest accepted support: `6 sigma + 1`, rounded up to odd.
pub fn min_support(sigma_max: f64) -> usize {
    round_up_odd(6.0 * sigma_max + 1.0)
}

/// Support used when none is given: radius `ceil(6.5 sigma)`.
///
/// The truncated Gaussian mass outside this window is below `1e-9`, so
/// enlarging it further leaves every normalized tap unchanged to that
/// relative precision.
pub fn default_support(sigma_max: f64) -> usize {
    2 * (6.5 * sigma_max).ceil() as usize + 1
}

impl BlurConfig {
    pub fn new(sigma_major: f64, sigma_minor: f64, theta: f64, noise_sigma: f64) -> Result<Self> {
        let cfg = Self {
            sigma_major,
            sigma_minor,
            theta,
            noise_sigma,
            support: 1,
        };
        cfg.check_sigmas()?;
        Ok(Self {
            support: default_support(sigma_major.max(sigma_minor)),
            ..cfg
        })
    }

    pub fn isotropic(sigma: f64, noise_sigma: f64) -> Result<Self> {
        Self::new(sigma, sigma, 0.0, noise_sigma)
    }

    /// Replaces the support; it must be odd and at least [`min_support`].
    pub fn with_support(self, support: usize) -> Result<Self> {
        let cfg = Self { support, ..self };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_major.max(self.sigma_minor)
    }

    fn check_sigmas(&self) -> Result<()> {
        if !(self.sigma_major > 0.0 && self.sigma_minor > 0.0)
            || !self.sigma_major.is_finite()
            || !self.sigma_minor.is_finite()
        {
            return Err(Error::invalid(format!(
                "blur sigmas must be positive, got ({}, {})",
                self.sigma_major, self.sigma_minor
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !self.theta.is_finite() {
            return Err(Error::invalid("theta must be finite"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_sigmas()?;
        if self.support % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel support must be odd, got {}",
                self.support
            )));
        }
        let min = min_support(self.sigma_max());
        if self.support < min {
            return Err(Error::invalid(format!(
                "kernel support {} below minimum {min} for sigma {}",
                self.support,
                self.sigma_max()
            )));
        }
        Ok(())
    }
}

/// Midpoint-sampled anisotropic Gaussian, normalized to unit sum.
///
/// Tap at offset `u = (dx, dy)` from the center is `exp(-u' S^-1 u / 2)`
/// with `S = R(theta) diag(sigma_major^2, sigma_minor^2) R(theta)'`.
pub fn gaussian_kernel<T: Scalar>(config: &BlurConfig) -> Result<Kernel<T>> {
    config.validate()?;
    let s = config.support;
    let r = (s / 2) as f64;
    let (sin, cos) = config.theta.sin_cos();
    let ia = 1.0 / (config.sigma_major * config.sigma_major);
    let ib = 1.0 / (config.sigma_minor * config.sigma_minor);
    let mut taps = Vec::with_capacity(s * s);
    for row in 0..s {
        let dy = row as f64 - r;
        for col in 0..s {
            let dx = col as f64 - r;
            let along = dx * cos + dy * sin;
            let across = -dx * sin + dy * cos;
            let q = along * along * ia + across * across * ib;
            taps.push((-0.5 * q).exp());
        }
    }
    let sum: f64 = taps.iter().sum();
    Kernel::from_taps(s, taps.into_iter().map(|v| T::lit(v / sum)).collect())
}

fn check_range(name: &str, range: [f64; 2]) -> Result<()> {
    if !(range[0] <= range[1]) || !range[0].is_finite() || !range[1].is_finite() {
        return Err(Error::invalid(format!(
            "{name} range [{}, {}] is inverted or not finite",
            range[0], range[1]
        )));
    }
    Ok(())
}

fn uniform(r: &mut rng::Rng, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * r.random::<f64>()
}

/// Draws sigmas uniformly in `sigma_range^2`, theta uniformly in `[0, 2 pi)`
/// and noise uniformly in `noise_range`.
pub fn sample_blur_config(seed: u64, sigma_range: [f64; 2], noise_range: [f64; 2]) -> Result<BlurConfig> {
    check_range("sigma", sigma_range)?;
    check_range("noise", noise_range)?;
    if sigma_range[0] <= 0.0 {
        return Err(Error::invalid("sigma range must be positive"));
    }
    if noise_range[0] < 0.0 {
        return Err(Error::invalid("noise range must be nonnegative"));
    }
    let mut r = rng::rng(seed);
    let sigma_major = uniform(&mut r, sigma_range);
    let sigma_minor = uniform(&mut r, sigma_range);
    let theta = 2.0 * PI * r.random::<f64>();
    let noise_sigma = uniform(&mut r, noise_range);
    BlurConfig::new(sigma_major, sigma_minor, theta, noise_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tap_sum(k: &Kernel<f64>) -> f64 {
        k.taps().iter().sum()
    }

    #[test]
    fn isotropic_is_rotation_invariant() {
        let a: Kernel<f64> = gaussian_kernel(&BlurConfig::new(1.7, 1.7, 0.0, 0.0).unwrap()).unwrap();
        for theta in [0.3, 1.0, 2.5, 5.9] {
            let b: Kernel<f64> = gaussian_kernel(&BlurConfig::new(1.7, 1.7, theta, 0.0).unwrap()).unwrap();
            for (x, y) in a.taps().iter().zip(b.taps()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn point_symmetric() {
        let k: Kernel<f64> = gaussian_kernel(&BlurConfig::new(2.5, 0.6, 0.7, 0.0).unwrap()).unwrap();
        let s = k.size();
        for r in 0..s {
            for c in 0..s {
                assert!((k.get(r, c) - k.get(s - 1 - r, s - 1 - c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn center_tap_matches_direct_sum() {
        let cfg = BlurConfig::new(1.0, 1.0, 0.0, 0.0).unwrap().with_support(7).unwrap();
        let k: Kernel<f64> = gaussian_kernel(&cfg).unwrap();
        let mut z = 0.0;
        for y in -3i32..=3 {
            for x in -3i32..=3 {
                z += (-((x * x + y * y) as f64) / 2.0).exp();
            }
        }
        assert!((k.get(3, 3) - 1.0 / z).abs() < 1e-15);
    }

    #[test]
    fn swapping_axes_is_a_quarter_turn() {
        let a: Kernel<f64> = gaussian_kernel(&BlurConfig::new(2.2, 0.8, 0.4, 0.0).unwrap()).unwrap();
        let b: Kernel<f64> =
            gaussian_kernel(&BlurConfig::new(0.8, 2.2, 0.4 + PI / 2.0, 0.0).unwrap()).unwrap();
        for (x, y) in a.taps().iter().zip(b.taps()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn enlarging_default_support_changes_taps_below_1e9() {
        for (sa, sb, th) in [(4.0, 0.3, 0.2), (2.0, 2.0, 0.0), (0.3, 0.3, 1.0), (3.1, 1.4, 2.3)] {
            let cfg = BlurConfig::new(sa, sb, th, 0.0).unwrap();
            let small: Kernel<f64> = gaussian_kernel(&cfg).unwrap();
            let big: Kernel<f64> = gaussian_kernel(&cfg.with_support(cfg.support + 10).unwrap()).unwrap();
            let big = big.taps();
            let off = 5;
            let s = cfg.support;
            for r in 0..s {
                for c in 0..s {
                    let a = small.get(r, c);
                    let b = big[(r + off) * (s + 10) + c + off];
                    assert!((a - b).abs() <= 1e-9 * b, "({sa},{sb}) tap ({r},{c}): {a} vs {b}");
                }
            }
            assert!((tap_sum(&small) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(BlurConfig::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(BlurConfig::new(1.0, -1.0, 0.0, 0.0).is_err());
        let cfg = BlurConfig::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert!(cfg.with_support(8).is_err());
        assert!(cfg.with_support(5).is_err());
        assert!(cfg.with_support(7).is_ok());
    }

    #[test]
    fn sampler_degenerate_range_and_determinism() {
        let a = sample_blur_config(5, [1.0, 1.0], [0.01, 0.01]).unwrap();
        assert_eq!(a.sigma_major, 1.0);
        assert_eq!(a.sigma_minor, 1.0);
        assert_eq!(a.noise_sigma, 0.01);
        let b = sample_blur_config(5, [1.0, 1.0], [0.01, 0.01]).unwrap();
        assert_eq!(a, b);
        assert!(sample_blur_config(5, [2.0, 1.0], [0.0, 0.0]).is_err());
        assert!(sample_blur_config(5, [1.0, 2.0], [0.1, 0.0]).is_err());
    }

    #[test]
    fn sampler_theta_covers_circle() {
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for seed in 0..100_000u64 {
            let c = sample_blur_config(seed, [0.3, 4.0], [0.0, 0.0]).unwrap();
            assert!((0.0..2.0 * PI).contains(&c.theta));
            assert!((0.3..=4.0).contains(&c.sigma_major));
            lo = lo.min(c.theta);
            hi = hi.max(c.theta);
        }
        assert!(lo < 0.1 && hi > 2.0 * PI - 0.1);
    }
}
