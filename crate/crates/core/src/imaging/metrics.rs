use super::{Image, Kernel, RawKernel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ceiling reported for identical inputs instead of `+inf`.
pub const PSNR_CAP_DB: f64 = 99.0;

/// `10 log10(peak^2 / MSE)` in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Scalar>(reference: &Image<T>, test: &Image<T>, peak: f64) -> Result<f64> {
    reference.ensure_same_shape(test)?;
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("psnr peak must be > 0, got {peak}")));
    }
    let mse = mse(reference.data(), test.data());
    Ok(psnr_from_mse(mse, peak))
}

pub fn mse<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    sum / a.len() as f64
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

/// Best alignment found by [`ksim_search`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsimMatch {
    pub ksim: f64,
    /// Shift `(dy, dx)` applied to the second kernel.
    pub shift: (isize, isize),
}

/// Maximum normalized cross-correlation over all integer shifts that leave
/// any overlap between the two supports.
///
/// This is the usual kernel-similarity measure from the blind-deblurring
/// literature, reconstructed here rather than taken from a reference
/// implementation.
pub fn ksim_search(a: &RawKernel<f64>, b: &RawKernel<f64>) -> Result<KsimMatch> {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidKernel("zero-norm kernel in similarity".into()));
    }
    // Both kernels are centered; offsets place each tap in a common frame.
    let (sa, sb) = (a.size as isize, b.size as isize);
    let (ra, rb) = (sa / 2, sb / 2);
    let reach = ra + rb;
    let mut best = KsimMatch {
        ksim: f64::NEG_INFINITY,
        shift: (0, 0),
    };
    // Scan outward from zero shift so ties resolve to the smallest displacement.
    let mut shifts: Vec<(isize, isize)> = (-reach..=reach)
        .flat_map(|dy| (-reach..=reach).map(move |dx| (dy, dx)))
        .collect();
    shifts.sort_by_key(|&(dy, dx)| (dy.abs().max(dx.abs()), dy.abs() + dx.abs()));
    for (dy, dx) in shifts {
        let mut acc = 0.0;
        for r in 0..sa {
            // tap of b at frame position p - shift
            let br = r - ra - dy + rb;
            if br < 0 || br >= sb {
                continue;
            }
            for c in 0..sa {
                let bc = c - ra - dx + rb;
                if bc < 0 || bc >= sb {
                    continue;
                }
                acc += a.taps[(r * sa + c) as usize] * b.taps[(br * sb + bc) as usize];
            }
        }
        let score = acc / (na * nb);
        if score > best.ksim {
            best = KsimMatch {
                ksim: score,
                shift: (dy, dx),
            };
        }
    }
    Ok(best)
}

/// Kernel similarity (KSIM) of two valid kernels.
pub fn kernel_similarity<T: Scalar>(k_true: &Kernel<T>, k_est: &Kernel<T>) -> Result<f64> {
    let a = RawKernel::from(&k_true.cast::<f64>());
    let b = RawKernel::from(&k_est.cast::<f64>());
    Ok(ksim_search(&a, &b)?.ksim.clamp(0.0, 1.0))
}

/// PSNR of an estimated kernel against the true one after aligning it at the
/// KSIM-optimal shift, with the true kernel's largest tap as peak.
pub fn kernel_psnr<T: Scalar>(k_true: &Kernel<T>, k_est: &Kernel<T>) -> Result<f64> {
    let a = RawKernel::from(&k_true.cast::<f64>());
    let b = RawKernel::from(&k_est.cast::<f64>());
    let m = ksim_search(&a, &b)?;
    let size = a.size.max(b.size) + 2 * (m.shift.0.unsigned_abs().max(m.shift.1.unsigned_abs()));
    let place = |k: &RawKernel<f64>, (dy, dx): (isize, isize)| {
        let mut plane = vec![0.0; size * size];
        let off = (size - k.size) as isize / 2;
        for r in 0..k.size as isize {
            for c in 0..k.size as isize {
                let y = (r + off + dy) as usize;
                let x = (c + off + dx) as usize;
                plane[y * size + x] = k.taps[(r * k.size as isize + c) as usize];
            }
        }
        plane
    };
    let pa = place(&a, (0, 0));
    let pb = place(&b, m.shift);
    let peak = a.taps.iter().cloned().fold(0.0, f64::max);
    Ok(psnr_from_mse(mse(&pa, &pb), peak))
}
