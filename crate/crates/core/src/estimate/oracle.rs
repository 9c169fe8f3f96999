//! Dense spatial-domain solver for the regularized multi-image least squares.
//!
//! Builds the circular convolution matrices explicitly and solves the normal
//! equations `(sum A_n' A_n + lambda N I) k = sum A_n' y_n` by dense
//! factorization. The unknown is the kernel over the whole image plane, the
//! same space the Fourier route solves in, so both must agree to rounding.
//! Only meant for small images.

use nalgebra::{DMatrix, DVector};

use super::fourier::{crop_at_origin, PairSet};
use crate::error::{Error, Result};
use crate::imaging::RawKernel;
use crate::scalar::Scalar;

pub const ORACLE_MAX_EXTENT: usize = 32;
pub const ORACLE_MAX_SUPPORT: usize = 9;

#[derive(Clone, Debug)]
pub struct OracleEstimate {
    /// Plane estimate, index `(0, 0)` = zero displacement.
    pub plane: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// Support-sized crop centered on the zero displacement, unprojected.
    pub raw: RawKernel<f64>,
}

/// `A[p, q] = x[p - q]` (circular), so `A k` is `k * x`.
fn convolution_matrix(x: &[f64], h: usize, w: usize) -> DMatrix<f64> {
    let n = h * w;
    DMatrix::from_fn(n, n, |p, q| {
        let (py, px) = (p / w, p % w);
        let (qy, qx) = (q / w, q % w);
        let y = (py + h - qy) % h;
        let xx = (px + w - qx) % w;
        x[y * w + xx]
    })
}

pub fn estimate_kernel_spatial_oracle<T: Scalar>(input: &PairSet<T>) -> Result<OracleEstimate> {
    let (h, w, channels) = input.image_shape();
    if h > ORACLE_MAX_EXTENT || w > ORACLE_MAX_EXTENT {
        return Err(Error::invalid(format!(
            "oracle limited to {ORACLE_MAX_EXTENT}x{ORACLE_MAX_EXTENT} images, got {h}x{w}"
        )));
    }
    if input.kernel_support() > ORACLE_MAX_SUPPORT {
        return Err(Error::invalid(format!(
            "oracle limited to support {ORACLE_MAX_SUPPORT}, got {}",
            input.kernel_support()
        )));
    }
    let n = h * w;
    let count = input.len() as f64;
    let mut plane = vec![0.0f64; n];
    for ch in 0..channels {
        let mut normal = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for (x, y) in input.pairs() {
            let xs: Vec<f64> = x.plane(ch).iter().map(|v| v.as_f64()).collect();
            let ys = DVector::from_iterator(n, y.plane(ch).iter().map(|v| v.as_f64()));
            let a = convolution_matrix(&xs, h, w);
            normal += a.transpose() * &a;
            rhs += a.transpose() * ys;
        }
        for i in 0..n {
            normal[(i, i)] += input.lambda() * count;
        }
        let solution = match normal.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => normal
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::SingularSystem("normal equations are not invertible".into()))?,
        };
        if solution.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite solution".into()));
        }
        for (p, v) in plane.iter_mut().zip(solution.iter()) {
            *p += v / channels as f64;
        }
    }
    let raw = crop_at_origin(&plane, h, w, input.kernel_support())?;
    Ok(OracleEstimate {
        plane,
        height: h,
        width: w,
        raw,
    })
}
