use rand::Rng;

use super::gaussian::{gaussian_kernel, BlurConfig};
use crate::error::Result;
use crate::imaging::{convolve, Boundary, Image, Kernel};
use crate::rng;
use crate::scalar::Scalar;

/// Supersampling factor per axis; edges are box-filtered to the pixel grid.
pub const SUPERSAMPLE: usize = 4;

/// Standard deviation (pixels) of the Gaussian capture blur applied last.
///
/// Photographs are band-limited by lens and sensor, so their spectra hold
/// little energy near Nyquist. Without it every edge is a perfect step and a
/// single sharp/blurry pair pins down any kernel.
pub const CAPTURE_SIGMA: f64 = 0.7;

/// Dead-leaves scene: occluding disks with a `r^-3` radius law (radii from
/// one pixel to half the shorter side), which gives the scale-invariant edge
/// statistics of natural images. Disks are drawn front to back until every
/// sample is covered, rendered at [`SUPERSAMPLE`]x, averaged down and
/// softened by a [`CAPTURE_SIGMA`] Gaussian.
///
/// Used as the stand-in sharp-image corpus when no photographs are supplied.
pub fn dead_leaves<T: Scalar>(height: usize, width: usize, channels: usize, seed: u64) -> Result<Image<T>> {
    let mut r = rng::rng(seed);
    let ss = SUPERSAMPLE;
    let (hh, ww) = (height * ss, width * ss);
    let rmin = ss as f64;
    let rmax = (0.5 * hh.min(ww) as f64).max(rmin);
    let (amin, amax) = (rmin.powi(-2), rmax.powi(-2));
    let plane = hh * ww;
    let mut fine = vec![0.5f64; plane * channels];
    let mut covered = vec![false; plane];
    let mut left = plane;
    while left > 0 {
        let u: f64 = r.random();
        let radius = (amin - u * (amin - amax)).powf(-0.5);
        let cy = r.random::<f64>() * hh as f64;
        let cx = r.random::<f64>() * ww as f64;
        let gray = 0.05 + 0.9 * r.random::<f64>();
        let tint: Vec<f64> = (0..channels)
            .map(|_| (gray + 0.15 * (r.random::<f64>() - 0.5)).clamp(0.0, 1.0))
            .collect();
        let y0 = (cy - radius).floor().max(0.0) as usize;
        let y1 = ((cy + radius).ceil() as usize).min(hh);
        let x0 = (cx - radius).floor().max(0.0) as usize;
        let x1 = ((cx + radius).ceil() as usize).min(ww);
        let r2 = radius * radius;
        for y in y0..y1 {
            let dy = y as f64 + 0.5 - cy;
            for x in x0..x1 {
                let dx = x as f64 + 0.5 - cx;
                let i = y * ww + x;
                if !covered[i] && dx * dx + dy * dy <= r2 {
                    covered[i] = true;
                    left -= 1;
                    for (c, &v) in tint.iter().enumerate() {
                        fine[c * plane + i] = v;
                    }
                }
            }
        }
    }
    let norm = 1.0 / (ss * ss) as f64;
    let mut data = vec![0.0f64; height * width * channels];
    for c in 0..channels {
        let src = &fine[c * plane..(c + 1) * plane];
        for y in 0..height {
            for x in 0..width {
                let mut s = 0.0;
                for a in 0..ss {
                    let row = &src[(y * ss + a) * ww + x * ss..][..ss];
                    s += row.iter().sum::<f64>();
                }
                data[(c * height + y) * width + x] = s * norm;
            }
        }
    }
    let image = Image::from_planar(height, width, channels, data)?;
    let capture: Kernel<f64> = gaussian_kernel(&BlurConfig::isotropic(CAPTURE_SIGMA, 0.0)?)?;
    Ok(convolve(&image, &capture, Boundary::Replicate)?.cast())
}

/// `count` independent dead-leaves scenes seeded from `seed`.
pub fn dead_leaves_pool<T: Scalar>(
    count: usize,
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
) -> Result<Vec<Image<T>>> {
    (0..count)
        .map(|i| dead_leaves(height, width, channels, rng::derive_seed(seed, i as u64)))
        .collect()
}
