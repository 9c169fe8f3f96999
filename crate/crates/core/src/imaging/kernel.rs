use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Odd-sized, nonnegative, unit-sum blur kernel stored row-major.
///
/// The center tap sits at `(size / 2, size / 2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel<T = f64> {
    size: usize,
    taps: Vec<T>,
}

/// Odd-sized square filter with unconstrained taps (e.g. an unprojected estimate).
#[derive(Clone, Debug, PartialEq)]
pub struct RawKernel<T = f64> {
    pub size: usize,
    pub taps: Vec<T>,
}

impl<T: Scalar> RawKernel<T> {
    pub fn new(size: usize, taps: Vec<T>) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::InvalidKernel(format!("size must be odd, got {size}")));
        }
        if taps.len() != size * size {
            return Err(Error::InvalidKernel(format!(
                "expected {} taps, got {}",
                size * size,
                taps.len()
            )));
        }
        Ok(Self { size, taps })
    }

    pub fn norm(&self) -> T {
        self.taps.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Clamps negatives to zero and rescales to unit sum.
    pub fn project(&self) -> Result<Kernel<T>> {
        let taps: Vec<T> = self.taps.iter().map(|&v| v.max(T::zero())).collect();
        Kernel::from_taps(self.size, taps)
    }
}

impl<T: Scalar> From<&Kernel<T>> for RawKernel<T> {
    fn from(k: &Kernel<T>) -> Self {
        Self {
            size: k.size,
            taps: k.taps.clone(),
        }
    }
}

impl<T: Scalar> Kernel<T> {
    /// Validates and normalizes taps to unit sum.
    pub fn from_taps(size: usize, taps: Vec<T>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::InvalidKernel(format!(
                "size must be odd and positive, got {size}"
            )));
        }
        if taps.len() != size * size {
            return Err(Error::InvalidKernel(format!(
                "expected {} taps, got {}",
                size * size,
                taps.len()
            )));
        }
        if taps.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidKernel(
                "taps must be finite and nonnegative".into(),
            ));
        }
        let sum: T = taps.iter().copied().sum();
        if sum <= T::zero() {
            return Err(Error::InvalidKernel("taps sum to zero".into()));
        }
        let taps = taps.into_iter().map(|v| v / sum).collect();
        Ok(Self { size, taps })
    }

    pub fn delta(size: usize) -> Result<Self> {
        let mut taps = vec![T::zero(); size * size];
        if size % 2 == 1 {
            taps[size * size / 2] = T::one();
        }
        Self::from_taps(size, taps)
    }

    pub fn box_filter(size: usize) -> Result<Self> {
        Self::from_taps(size, vec![T::one(); size * size])
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    #[inline]
    pub fn taps(&self) -> &[T] {
        &self.taps
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.taps[row * self.size + col]
    }

    pub fn norm(&self) -> T {
        self.taps.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Zero-pads symmetrically to a larger odd size.
    pub fn padded(&self, size: usize) -> Result<Self> {
        if size < self.size || size % 2 == 0 {
            return Err(Error::InvalidKernel(format!(
                "cannot pad {} to {size}",
                self.size
            )));
        }
        let off = (size - self.size) / 2;
        let mut taps = vec![T::zero(); size * size];
        for r in 0..self.size {
            for c in 0..self.size {
                taps[(r + off) * size + c + off] = self.get(r, c);
            }
        }
        Ok(Self { size, taps })
    }

    /// Cyclic shift of the taps inside the support by `(dy, dx)`.
    pub fn shifted(&self, dy: isize, dx: isize) -> Self {
        let s = self.size as isize;
        let mut taps = vec![T::zero(); self.taps.len()];
        for r in 0..s {
            for c in 0..s {
                let nr = (r + dy).rem_euclid(s) as usize;
                let nc = (c + dx).rem_euclid(s) as usize;
                taps[nr * self.size + nc] = self.taps[(r * s + c) as usize];
            }
        }
        Self {
            size: self.size,
            taps,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Kernel<U> {
        Kernel {
            size: self.size,
            taps: self.taps.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }
}
