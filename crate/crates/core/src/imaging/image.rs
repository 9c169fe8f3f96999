use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Planar raster: `data[(c * height + y) * width + x]`.
///
/// Nominal intensity range is `[0, 1]`; degraded images may leave it, but
/// every value stays finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T = f64> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!(
            "image extent must be positive, got {height}x{width}"
        )));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::invalid(format!(
            "image channels must be 1 or 3, got {channels}"
        )));
    }
    Ok(())
}

impl<T: Scalar> Image<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Result<Self> {
        check_dims(height, width, channels)?;
        if !value.is_finite() {
            return Err(Error::invalid("image values must be finite"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        })
    }

    /// Builds an image from planar data, rejecting non-finite values.
    pub fn from_planar(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image values must be finite"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from pixel-interleaved (row-major `H x W x C`) data.
    pub fn from_interleaved(
        height: usize,
        width: usize,
        channels: usize,
        data: &[T],
    ) -> Result<Self> {
        check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        let mut planar = vec![T::zero(); data.len()];
        for (p, px) in data.chunks_exact(channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                planar[c * height * width + p] = v;
            }
        }
        Self::from_planar(height, width, channels, planar)
    }

    pub fn to_interleaved(&self) -> Vec<T> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(self.data.len());
        for p in 0..plane {
            for c in 0..self.channels {
                out.push(self.data[c * plane + p]);
            }
        }
        out
    }

    /// Creates an image by evaluating `f(c, y, x)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        check_dims(height, width, channels)?;
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::from_planar(height, width, channels, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the planar buffer. Callers must keep values finite.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies out a `height x width` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::invalid(format!(
                "crop {height}x{width}@({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in top..top + height {
                data.extend_from_slice(&plane[y * self.width + left..y * self.width + left + width]);
            }
        }
        Ok(Self {
            height,
            width,
            channels: self.channels,
            data,
        })
    }

    /// Crop whose window may extend past the border; outside samples replicate the edge.
    pub fn crop_replicate(&self, top: isize, left: isize, height: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(height * width * self.channels);
        let hmax = self.height as isize - 1;
        let wmax = self.width as isize - 1;
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in 0..height as isize {
                let sy = (top + y).clamp(0, hmax) as usize;
                for x in 0..width as isize {
                    let sx = (left + x).clamp(0, wmax) as usize;
                    data.push(plane[sy * self.width + sx]);
                }
            }
        }
        Self {
            height,
            width,
            channels: self.channels,
            data,
        }
    }

    /// Channel average as a single-channel image.
    pub fn to_gray(&self) -> Self {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.height * self.width;
        let scale = T::one() / T::from_usize_lossy(self.channels);
        let data = (0..n)
            .map(|p| (0..self.channels).map(|c| self.data[c * n + p]).sum::<T>() * scale)
            .collect();
        Self {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Horizontal mirror.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    /// Counter-clockwise quarter turn; swaps height and width.
    pub fn rot90(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut data = vec![T::zero(); self.data.len()];
        for c in 0..self.channels {
            for y in 0..w {
                for x in 0..h {
                    // out[y][x] = in[x][w - 1 - y]
                    data[(c * w + y) * h + x] = self.get(c, x, w - 1 - y);
                }
            }
        }
        Self {
            height: w,
            width: h,
            channels: self.channels,
            data,
        }
    }

    /// `v -> v^gamma` on the clamped-nonnegative value (gamma-encoded to linear).
    pub fn expand_gamma(&self, gamma: f64) -> Self {
        let g = T::lit(gamma);
        self.map(|v| v.max(T::zero()).powf(g))
    }

    /// `v -> v^(1/gamma)` (linear to gamma-encoded).
    pub fn compress_gamma(&self, gamma: f64) -> Self {
        let g = T::lit(1.0 / gamma);
        self.map(|v| v.max(T::zero()).powf(g))
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}
