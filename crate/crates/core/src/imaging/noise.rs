use rand_distr::{Distribution, StandardNormal};

use super::Image;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Adds i.i.d. `N(0, sigma^2)` to every sample, drawn from a xoshiro256++ stream seeded by `seed`.
pub fn add_gaussian_noise<T: Scalar>(image: &Image<T>, sigma: f64, seed: u64) -> Result<Image<T>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let mut r = rng::rng(seed);
    let mut out = image.clone();
    for v in out.data_mut() {
        let z: f64 = StandardNormal.sample(&mut r);
        *v += T::lit(sigma * z);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let img = Image::filled(4, 4, 3, 0.5).unwrap();
        assert_eq!(add_gaussian_noise(&img, 0.0, 9).unwrap(), img);
    }

    #[test]
    fn negative_sigma_is_rejected() {
        let img = Image::<f64>::zeros(2, 2, 1).unwrap();
        assert!(add_gaussian_noise(&img, -0.1, 0).is_err());
        assert!(add_gaussian_noise(&img, f64::NAN, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let img = Image::filled(8, 8, 1, 0.5).unwrap();
        let a = add_gaussian_noise(&img, 0.1, 42).unwrap();
        let b = add_gaussian_noise(&img, 0.1, 42).unwrap();
        let c = add_gaussian_noise(&img, 0.1, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_std_matches_sigma() {
        let img = Image::<f64>::zeros(1000, 1000, 1).unwrap();
        let noisy = add_gaussian_noise(&img, 0.01, 2024).unwrap();
        let n = noisy.len() as f64;
        let mean = noisy.data().iter().sum::<f64>() / n;
        let var = noisy.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 0.01).abs() <= 3e-5, "std = {}", var.sqrt());
    }
}
