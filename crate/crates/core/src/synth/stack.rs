use super::gaussian::{gaussian_kernel, BlurConfig};
use crate::error::{Error, Result};
use crate::imaging::{add_gaussian_noise, convolve, Boundary, Image};
use crate::patches::PatchStack;
use crate::rng;
use crate::scalar::Scalar;

/// Blurs every sharp image with the same kernel built from `config`, then adds
/// an independent noise realization per element.
///
/// Returns `(blurry, sharp)`.
pub fn make_stack<T: Scalar>(
    sharp: &[Image<T>],
    config: &BlurConfig,
    boundary: Boundary,
    seed: u64,
) -> Result<(PatchStack<T>, PatchStack<T>)> {
    let first = sharp
        .first()
        .ok_or_else(|| Error::invalid("make_stack needs at least one sharp image"))?;
    if sharp.iter().any(|s| !s.same_shape(first)) {
        return Err(Error::shape("sharp images in a stack must share one shape"));
    }
    let kernel = gaussian_kernel::<T>(config)?;
    let blurry = sharp
        .iter()
        .enumerate()
        .map(|(n, x)| {
            let y = convolve(x, &kernel, boundary)?;
            add_gaussian_noise(&y, config.noise_sigma, rng::derive_seed(seed, n as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((PatchStack::new(blurry)?, PatchStack::new(sharp.to_vec())?))
}
