use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::imaging::fft::Fft2;
use crate::imaging::{Image, Kernel, RawKernel};
use crate::scalar::Scalar;

/// Sharp/blurry training pairs for non-blind kernel estimation.
#[derive(Clone, Debug)]
pub struct PairSet<T = f64> {
    pairs: Vec<(Image<T>, Image<T>)>,
    lambda: f64,
    kernel_support: usize,
}

impl<T: Scalar> PairSet<T> {
    pub fn new(pairs: Vec<(Image<T>, Image<T>)>, lambda: f64, kernel_support: usize) -> Result<Self> {
        let (x0, _) = pairs
            .first()
            .ok_or_else(|| Error::invalid("a pair set needs at least one pair"))?;
        for (x, y) in &pairs {
            x0.ensure_same_shape(x)?;
            x0.ensure_same_shape(y)?;
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        if kernel_support == 0 || kernel_support % 2 == 0 {
            return Err(Error::invalid(format!(
                "kernel support must be odd, got {kernel_support}"
            )));
        }
        if kernel_support > x0.height() || kernel_support > x0.width() {
            return Err(Error::KernelExceedsImage);
        }
        Ok(Self {
            pairs,
            lambda,
            kernel_support,
        })
    }

    pub fn pairs(&self) -> &[(Image<T>, Image<T>)] {
        &self.pairs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kernel_support(&self) -> usize {
        self.kernel_support
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(height, width, channels)` of every image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.pairs[0].0.shape()
    }
}

/// Full-plane estimate plus its support-sized crops.
#[derive(Clone, Debug)]
pub struct KernelEstimate<T = f64> {
    /// `H x W` spatial estimate; index `(0, 0)` is the zero displacement.
    pub plane: Vec<T>,
    pub height: usize,
    pub width: usize,
    /// Top-left corner (in the plane, cyclically) of the maximum-energy window.
    pub window: (usize, usize),
    /// Unprojected crop at `window`.
    pub raw: RawKernel<T>,
    /// `raw` with negatives clamped and renormalized to unit sum.
    pub projected: Kernel<T>,
}

/// Running sums `sum conj(X_n) Y_n` and `sum |X_n|^2` per channel.
///
/// Adding pairs one at a time lets a sweep evaluate every prefix size `N`
/// and several regularization weights without recomputing transforms.
pub struct FourierAccumulator<T: Scalar> {
    fft: Fft2<T>,
    channels: usize,
    cross: Vec<Vec<Complex<T>>>,
    power: Vec<Vec<T>>,
    count: usize,
}

impl<T: Scalar> FourierAccumulator<T> {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        let n = height * width;
        Self {
            fft: Fft2::new(height, width),
            channels,
            cross: vec![vec![Complex::new(T::zero(), T::zero()); n]; channels],
            power: vec![vec![T::zero(); n]; channels],
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add_pair(&mut self, sharp: &Image<T>, blurry: &Image<T>) -> Result<()> {
        sharp.ensure_same_shape(blurry)?;
        let (h, w, c) = sharp.shape();
        if h != self.fft.height() || w != self.fft.width() || c != self.channels {
            return Err(Error::shape(format!(
                "pair {:?} does not match accumulator {}x{}x{}",
                sharp.shape(),
                self.fft.height(),
                self.fft.width(),
                self.channels
            )));
        }
        for ch in 0..c {
            let xs = self.fft.forward_real(sharp.plane(ch));
            let ys = self.fft.forward_real(blurry.plane(ch));
            for ((acc, pw), (x, y)) in self.cross[ch]
                .iter_mut()
                .zip(self.power[ch].iter_mut())
                .zip(xs.iter().zip(&ys))
            {
                *acc += x.conj() * y;
                *pw += x.norm_sqr();
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Per-channel `K = sum conj(X) Y / (sum |X|^2 + lambda N)`, entrywise.
    pub fn spectra(&self, lambda: f64) -> Result<Vec<Vec<Complex<T>>>> {
        if self.count == 0 {
            return Err(Error::invalid("no pairs accumulated"));
        }
        let damping = T::lit(lambda * self.count as f64);
        let mut out = Vec::with_capacity(self.channels);
        for (cross, power) in self.cross.iter().zip(&self.power) {
            if lambda == 0.0 {
                let peak = power.iter().fold(T::zero(), |m, &p| m.max(p));
                let floor = peak * T::lit(1e-14);
                if power.iter().any(|&p| p <= floor) {
                    return Err(Error::SingularFrequency);
                }
            }
            out.push(
                cross
                    .iter()
                    .zip(power)
                    .map(|(c, &p)| *c / (p + damping))
                    .collect(),
            );
        }
        Ok(out)
    }

    /// Channel-averaged spatial estimate over the full plane.
    pub fn solve_plane(&self, lambda: f64) -> Result<Vec<T>> {
        let spectra = self.spectra(lambda)?;
        let n = self.fft.height() * self.fft.width();
        let mut plane = vec![T::zero(); n];
        let scale = T::one() / T::from_usize_lossy(self.channels);
        for spec in spectra {
            for (p, v) in plane.iter_mut().zip(self.fft.inverse_real(spec)) {
                *p += v * scale;
            }
        }
        Ok(plane)
    }

    pub fn estimate(&self, lambda: f64, support: usize) -> Result<KernelEstimate<T>> {
        let (h, w) = (self.fft.height(), self.fft.width());
        let plane = self.solve_plane(lambda)?;
        let (window, raw) = crop_max_energy(&plane, h, w, support)?;
        let projected = raw
            .project()
            .map_err(|_| Error::InvalidKernel("estimate has no positive mass".into()))?;
        Ok(KernelEstimate {
            plane,
            height: h,
            width: w,
            window,
            raw,
            projected,
        })
    }
}

/// Multi-image Tikhonov-regularized kernel estimate computed per frequency.
///
/// Channels are estimated independently and averaged into one kernel.
pub fn estimate_kernel_fourier<T: Scalar>(input: &PairSet<T>) -> Result<KernelEstimate<T>> {
    let (h, w, c) = input.image_shape();
    let mut acc = FourierAccumulator::new(h, w, c);
    for (x, y) in input.pairs() {
        acc.add_pair(x, y)?;
    }
    acc.estimate(input.lambda(), input.kernel_support())
}

fn crop_at<T: Scalar>(plane: &[T], h: usize, w: usize, support: usize, origin: (usize, usize)) -> RawKernel<T> {
    let mut taps = Vec::with_capacity(support * support);
    for a in 0..support {
        let y = (origin.0 + a) % h;
        for b in 0..support {
            taps.push(plane[y * w + (origin.1 + b) % w]);
        }
    }
    RawKernel { size: support, taps }
}

/// `support x support` crop centered on the zero displacement.
pub fn crop_at_origin<T: Scalar>(plane: &[T], h: usize, w: usize, support: usize) -> Result<RawKernel<T>> {
    if support % 2 == 0 || support > h || support > w {
        return Err(Error::invalid(format!("bad crop support {support} for {h}x{w}")));
    }
    let r = support / 2;
    Ok(crop_at(plane, h, w, support, (h - r, w - r)))
}

/// Cyclic `support x support` window with the largest energy. Scanning
/// starts at the origin-centered window so it wins ties.
pub fn crop_max_energy<T: Scalar>(
    plane: &[T],
    h: usize,
    w: usize,
    support: usize,
) -> Result<((usize, usize), RawKernel<T>)> {
    if support % 2 == 0 || support > h || support > w || plane.len() != h * w {
        return Err(Error::invalid(format!("bad crop support {support} for {h}x{w}")));
    }
    let sq: Vec<f64> = plane.iter().map(|v| v.as_f64().powi(2)).collect();
    // Horizontal then vertical cyclic box sums.
    let mut rows = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = (0..support).map(|j| sq[y * w + (x + j) % w]).sum();
        }
    }
    let mut energy = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            energy[y * w + x] = (0..support).map(|i| rows[((y + i) % h) * w + x]).sum();
        }
    }
    let r = support / 2;
    let base = (h - r, w - r);
    let mut best = (f64::NEG_INFINITY, base);
    for dy in 0..h {
        let y = (base.0 + dy) % h;
        for dx in 0..w {
            let x = (base.1 + dx) % w;
            if energy[y * w + x] > best.0 {
                best = (energy[y * w + x], (y, x));
            }
        }
    }
    Ok((best.1, crop_at(plane, h, w, support, best.1)))
}
