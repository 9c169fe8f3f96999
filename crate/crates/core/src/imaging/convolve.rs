use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;

use super::fft::Fft2;
use super::{Image, Kernel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How samples outside the image are read during convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// Periodic wrap-around; matches the DFT product model exactly.
    Circular,
    /// Clamp to the nearest edge sample.
    Replicate,
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circular" => Ok(Boundary::Circular),
            "replicate" => Ok(Boundary::Replicate),
            other => Err(Error::invalid(format!(
                "unknown boundary '{other}' (expected circular or replicate)"
            ))),
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Circular => "circular",
            Boundary::Replicate => "replicate",
        })
    }
}

fn source_index(i: isize, n: usize, boundary: Boundary) -> usize {
    match boundary {
        Boundary::Circular => i.rem_euclid(n as isize) as usize,
        Boundary::Replicate => i.clamp(0, n as isize - 1) as usize,
    }
}

/// `maps[a][i]` = source index read by output index `i` for kernel row/col `a`.
fn index_maps(n: usize, size: usize, boundary: Boundary) -> Vec<Vec<usize>> {
    let r = (size / 2) as isize;
    (0..size as isize)
        .map(|a| {
            (0..n as isize)
                .map(|i| source_index(i + r - a, n, boundary))
                .collect()
        })
        .collect()
}

fn convolve_plane<T: Scalar>(
    src: &[T],
    dst: &mut [T],
    width: usize,
    kernel: &Kernel<T>,
    rows: &[Vec<usize>],
    cols: &[Vec<usize>],
) {
    let s = kernel.size();
    dst.iter_mut().for_each(|v| *v = T::zero());
    for a in 0..s {
        for b in 0..s {
            let k = kernel.get(a, b);
            if k == T::zero() {
                continue;
            }
            let cmap = &cols[b];
            for (y, &sy) in rows[a].iter().enumerate() {
                let srow = &src[sy * width..(sy + 1) * width];
                let drow = &mut dst[y * width..(y + 1) * width];
                for (d, &sx) in drow.iter_mut().zip(cmap) {
                    *d += k * srow[sx];
                }
            }
        }
    }
}

/// Spatial convolution `y[p] = sum_u k[u] x[p - u]` with `u` measured from the kernel center.
///
/// Every channel uses the same kernel.
pub fn convolve<T: Scalar>(image: &Image<T>, kernel: &Kernel<T>, boundary: Boundary) -> Result<Image<T>> {
    let kernels = vec![kernel; image.channels()];
    convolve_channels(image, &kernels, boundary)
}

/// Per-channel convolution with one kernel per channel.
pub fn convolve_per_channel<T: Scalar>(
    image: &Image<T>,
    kernels: &[Kernel<T>],
    boundary: Boundary,
) -> Result<Image<T>> {
    let refs: Vec<&Kernel<T>> = kernels.iter().collect();
    convolve_channels(image, &refs, boundary)
}

fn convolve_channels<T: Scalar>(
    image: &Image<T>,
    kernels: &[&Kernel<T>],
    boundary: Boundary,
) -> Result<Image<T>> {
    let (h, w, c) = image.shape();
    if kernels.len() != c {
        return Err(Error::shape(format!(
            "{} kernels supplied for a {c}-channel image",
            kernels.len()
        )));
    }
    if kernels.iter().any(|k| k.size() > h || k.size() > w) {
        return Err(Error::KernelExceedsImage);
    }
    let mut out = Image::zeros(h, w, c)?;
    for (ch, kernel) in kernels.iter().enumerate() {
        let rows = index_maps(h, kernel.size(), boundary);
        let cols = index_maps(w, kernel.size(), boundary);
        let src = image.plane(ch).to_vec();
        convolve_plane(&src, out.plane_mut(ch), w, kernel, &rows, &cols);
    }
    Ok(out)
}

/// Embeds the kernel into an `h x w` plane with its center tap at index `(0, 0)`
/// and the remaining taps wrapped around.
pub fn kernel_to_plane<T: Scalar>(kernel: &Kernel<T>, h: usize, w: usize) -> Result<Vec<T>> {
    if kernel.size() > h || kernel.size() > w {
        return Err(Error::KernelExceedsImage);
    }
    let r = kernel.radius() as isize;
    let mut plane = vec![T::zero(); h * w];
    for a in 0..kernel.size() {
        for b in 0..kernel.size() {
            let y = (a as isize - r).rem_euclid(h as isize) as usize;
            let x = (b as isize - r).rem_euclid(w as isize) as usize;
            plane[y * w + x] += kernel.get(a, b);
        }
    }
    Ok(plane)
}

/// Circular convolution through the DFT: `ifft(fft(x) * fft(k))`.
pub fn convolve_circular_fft<T: Scalar>(image: &Image<T>, kernel: &Kernel<T>) -> Result<Image<T>> {
    let (h, w, _) = image.shape();
    let fft = Fft2::new(h, w);
    let kspec = fft.forward_real(&kernel_to_plane(kernel, h, w)?);
    convolve_circular_spectrum(image, &kspec, &fft)
}

/// Circular convolution with a precomputed kernel spectrum.
pub(crate) fn convolve_circular_spectrum<T: Scalar>(
    image: &Image<T>,
    kspec: &[Complex<T>],
    fft: &Fft2<T>,
) -> Result<Image<T>> {
    let (h, w, c) = image.shape();
    let mut out = Image::zeros(h, w, c)?;
    for ch in 0..c {
        let mut spec = fft.forward_real(image.plane(ch));
        for (s, k) in spec.iter_mut().zip(kspec) {
            *s = *s * *k;
        }
        out.plane_mut(ch).copy_from_slice(&fft.inverse_real(spec));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image<f64> {
        let mut r = rng::rng(seed);
        Image::from_fn(h, w, c, |_, _, _| r.random::<f64>()).unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let img = random_image(5, 7, 3, 1);
        let k = Kernel::delta(1).unwrap();
        for b in [Boundary::Circular, Boundary::Replicate] {
            assert_eq!(convolve(&img, &k, b).unwrap(), img);
        }
    }

    #[test]
    fn delta_kernel_is_identity_for_both_modes() {
        let img = random_image(9, 6, 1, 2);
        let k = Kernel::delta(5).unwrap();
        for b in [Boundary::Circular, Boundary::Replicate] {
            assert_eq!(convolve(&img, &k, b).unwrap(), img);
        }
    }

    #[test]
    fn constant_image_is_preserved() {
        let img = Image::filled(8, 8, 1, 0.37).unwrap();
        let k = Kernel::from_taps(3, (1..=9).map(f64::from).collect()).unwrap();
        for b in [Boundary::Circular, Boundary::Replicate] {
            let out = convolve(&img, &k, b).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
        }
    }

    #[test]
    fn circular_box_matches_double_loop() {
        let img = random_image(8, 8, 1, 3);
        let k = Kernel::box_filter(3).unwrap();
        let out = convolve(&img, &k, Boundary::Circular).unwrap();
        for y in 0..8isize {
            for x in 0..8isize {
                let mut acc = 0.0;
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        acc += img.get(0, (y - dy).rem_euclid(8) as usize, (x - dx).rem_euclid(8) as usize) / 9.0;
                    }
                }
                assert!((acc - out.get(0, y as usize, x as usize)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn orientation_is_true_convolution() {
        // A single bright pixel reproduces the kernel, not its mirror.
        let mut img = Image::zeros(7, 7, 1).unwrap();
        img.set(0, 3, 3, 1.0);
        let taps: Vec<f64> = (1..=9).map(f64::from).collect();
        let k = Kernel::from_taps(3, taps).unwrap();
        let out = convolve(&img, &k, Boundary::Circular).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert!((out.get(0, 2 + a, 2 + b) - k.get(a, b)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn circular_matches_fft_product() {
        let img = random_image(12, 10, 3, 4);
        let taps: Vec<f64> = {
            let mut r = rng::rng(5);
            (0..25).map(|_| r.random::<f64>()).collect()
        };
        let k = Kernel::from_taps(5, taps).unwrap();
        let a = convolve(&img, &k, Boundary::Circular).unwrap();
        let b = convolve_circular_fft(&img, &k).unwrap();
        let num: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = a.data().iter().map(|x| x * x).sum();
        assert!((num / den).sqrt() < 1e-10);
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let img = random_image(4, 8, 1, 6);
        let k = Kernel::box_filter(5).unwrap();
        let err = convolve(&img, &k, Boundary::Replicate).unwrap_err();
        assert_eq!(err.to_string(), "kernel exceeds image extent");
    }

    #[test]
    fn per_channel_kernels() {
        let img = random_image(6, 6, 3, 7);
        let ks = [
            Kernel::delta(3).unwrap(),
            Kernel::box_filter(3).unwrap(),
            Kernel::delta(1).unwrap(),
        ];
        let out = convolve_per_channel(&img, &ks, Boundary::Replicate).unwrap();
        assert_eq!(out.plane(0), img.plane(0));
        assert_eq!(out.plane(2), img.plane(2));
        assert_ne!(out.plane(1), img.plane(1));
    }
}
