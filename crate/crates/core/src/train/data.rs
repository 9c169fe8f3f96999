//! Sharp-image corpus and on-the-fly degradation of training stacks.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::imaging::io::{list_files, read_image_any};
use crate::imaging::{add_gaussian_noise, Image, Kernel};
use crate::patches::PatchStack;
use crate::rng::{self, derive_seed};
use crate::scalar::Scalar;
use crate::synth::{dead_leaves_pool, gaussian_kernel, min_support, sample_blur_config, BlurConfig};

/// Sharp images that training and evaluation crops are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus<T = f64> {
    images: Vec<Image<T>>,
}

impl<T: Scalar> Corpus<T> {
    pub fn new(images: Vec<Image<T>>) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::invalid("empty corpus"))?;
        if images.iter().any(|im| im.channels() != first.channels()) {
            return Err(Error::shape("corpus images differ in channel count"));
        }
        Ok(Self { images })
    }

    /// Dead-leaves scenes, the default stand-in for natural photographs.
    pub fn synthetic(count: usize, size: usize, channels: usize, seed: u64) -> Result<Self> {
        Self::new(dead_leaves_pool(count, size, size, channels, seed)?)
    }

    /// Every `.png` and `.txt` image in `dir`, in file-name order.
    pub fn load(dir: &Path) -> Result<Self> {
        let files = list_files(dir, &["png", "txt"])?;
        if files.is_empty() {
            return Err(Error::invalid(format!("empty corpus: no images in {}", dir.display())));
        }
        Self::new(files.iter().map(|f| read_image_any(f)).collect::<Result<_>>()?)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images[0].channels()
    }

    pub fn images(&self) -> &[Image<T>] {
        &self.images
    }

    /// Holds out the last `max(1, len / 8)` images; a single image is shared.
    pub fn split_validation(&self) -> (Self, Self) {
        if self.images.len() < 2 {
            return (self.clone(), self.clone());
        }
        let hold = (self.images.len() / 8).max(1);
        let cut = self.images.len() - hold;
        (
            Self {
                images: self.images[..cut].to_vec(),
            },
            Self {
                images: self.images[cut..].to_vec(),
            },
        )
    }
}

/// Applies one of the eight flip/quarter-turn symmetries (`0..8`).
pub fn augment<T: Scalar>(image: &Image<T>, which: u8) -> Image<T> {
    let mut out = if which & 4 != 0 {
        image.flip_horizontal()
    } else {
        image.clone()
    };
    for _ in 0..which % 4 {
        out = out.rot90();
    }
    out
}

/// Degrades `n` crops of one corpus image with one shared blur.
///
/// Crops are taken with a margin of the kernel radius and flipped/rotated at
/// random; only the central `patch x patch` region is blurred and noised, so
/// every output pixel sees real image content. Returns `(blurry, sharp)`.
pub fn degrade_stack<T: Scalar>(
    corpus: &Corpus<T>,
    n: usize,
    patch: usize,
    blur: &BlurConfig,
    seed: u64,
) -> Result<(PatchStack<T>, PatchStack<T>)> {
    if n == 0 || patch == 0 {
        return Err(Error::invalid("stack size and patch must be positive"));
    }
    let mut r = rng::rng(seed);
    let image = &corpus.images[r.random_range(0..corpus.len())];
    let radius = blur.support / 2;
    let side = patch + 2 * radius;
    let crops: Vec<Image<T>> = (0..n)
        .map(|_| {
            let top = r.random_range(0..=image.height().saturating_sub(patch)) as isize - radius as isize;
            let left = r.random_range(0..=image.width().saturating_sub(patch)) as isize - radius as isize;
            let which = r.random_range(0..8u8);
            augment(&image.crop_replicate(top, left, side, side), which)
        })
        .collect();
    let kernel = gaussian_kernel::<T>(blur)?;
    let noise_seed = derive_seed(seed, 1);
    let mut blurry = Vec::with_capacity(n);
    let mut sharp = Vec::with_capacity(n);
    for (i, crop) in crops.iter().enumerate() {
        let y = blur_valid(crop, &kernel, patch)?;
        blurry.push(add_gaussian_noise(&y, blur.noise_sigma, derive_seed(noise_seed, i as u64))?);
        sharp.push(crop.crop(radius, radius, patch, patch)?);
    }
    Ok((PatchStack::new(blurry)?, PatchStack::new(sharp)?))
}

/// Central `patch x patch` region of `kernel * padded`, where `padded` carries
/// a margin of the kernel radius on every side so no boundary rule is needed.
fn blur_valid<T: Scalar>(padded: &Image<T>, kernel: &Kernel<T>, patch: usize) -> Result<Image<T>> {
    let s = kernel.size();
    let side = padded.width();
    debug_assert_eq!(side, patch + s - 1);
    let mut out = Image::zeros(patch, patch, padded.channels())?;
    for c in 0..padded.channels() {
        let src = padded.plane(c);
        let dst = out.plane_mut(c);
        for a in 0..s {
            for b in 0..s {
                // Output (y, x) reads padded sample (y + 2r - a, x + 2r - b).
                let k = kernel.get(a, b);
                let (dy, dx) = (s - 1 - a, s - 1 - b);
                for y in 0..patch {
                    let srow = &src[(y + dy) * side + dx..(y + dy) * side + dx + patch];
                    for (d, &v) in dst[y * patch..(y + 1) * patch].iter_mut().zip(srow) {
                        *d += k * v;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// A training stack: blur sigmas in `sigma_range^2`, random orientation, noise in
/// `noise_range`, kernel support at its minimum for the drawn sigmas.
pub fn sample_training_stack<T: Scalar>(
    corpus: &Corpus<T>,
    n: usize,
    patch: usize,
    sigma_range: [f64; 2],
    noise_range: [f64; 2],
    seed: u64,
) -> Result<(PatchStack<T>, PatchStack<T>)> {
    let blur = sample_blur_config(derive_seed(seed, 0), sigma_range, noise_range)?;
    let blur = blur.with_support(min_support(blur.sigma_max()))?;
    degrade_stack(corpus, n, patch, &blur, derive_seed(seed, 1))
}

/// Evaluation blur of nominal level `sigma`: major axis `sigma`, minor axis
/// uniform in `[max(0.3, sigma / 2), sigma]`, random orientation.
pub fn eval_blur(sigma: f64, noise: f64, seed: u64) -> Result<BlurConfig> {
    let mut r = rng::rng(seed);
    let lo = (sigma / 2.0).max(0.3).min(sigma);
    let minor = lo + (sigma - lo) * r.random::<f64>();
    let theta = 2.0 * PI * r.random::<f64>();
    let blur = BlurConfig::new(sigma, minor, theta, noise)?;
    blur.with_support(min_support(blur.sigma_max()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{convolve, kernel_similarity, Boundary};

    #[test]
    fn stacks_are_deterministic_and_shaped() {
        let corpus = Corpus::<f64>::synthetic(3, 40, 3, 1).unwrap();
        let a = sample_training_stack(&corpus, 4, 16, [0.3, 2.0], [0.002, 0.008], 5).unwrap();
        let b = sample_training_stack(&corpus, 4, 16, [0.3, 2.0], [0.002, 0.008], 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 4);
        assert_eq!(a.0.patch_shape(), (16, 16, 3));
        let c = sample_training_stack(&corpus, 4, 16, [0.3, 2.0], [0.002, 0.008], 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn augmentations_are_the_dihedral_group() {
        let im = Image::<f64>::from_fn(3, 3, 1, |_, y, x| (3 * y + x) as f64).unwrap();
        let all: Vec<_> = (0..8).map(|w| augment(&im, w)).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    #[test]
    fn augmentation_commutes_with_isotropic_blur() {
        // Blurring an augmented crop is the augmented blur of the crop, so the
        // effective kernel is unchanged.
        let blur = BlurConfig::isotropic(1.3, 0.0).unwrap();
        let k: Kernel<f64> = gaussian_kernel(&blur).unwrap();
        let im = crate::synth::dead_leaves::<f64>(24, 24, 1, 3).unwrap();
        let b = convolve(&im, &k, Boundary::Replicate).unwrap();
        for which in 0..8 {
            let lhs = convolve(&augment(&im, which), &k, Boundary::Replicate).unwrap();
            let rhs = augment(&b, which);
            assert!(lhs.data().iter().zip(rhs.data()).all(|(a, b)| (a - b).abs() < 1e-12));
            let taps = Image::from_planar(k.size(), k.size(), 1, k.taps().to_vec()).unwrap();
            let kt = augment(&taps, which);
            let kk = Kernel::from_taps(k.size(), kt.data().to_vec()).unwrap();
            assert!((kernel_similarity(&k, &kk).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn valid_blur_matches_full_convolution() {
        let blur = BlurConfig::new(1.4, 0.6, 0.8, 0.0).unwrap();
        let k: Kernel<f64> = gaussian_kernel(&blur).unwrap();
        let r = k.size() / 2;
        let im = crate::synth::dead_leaves::<f64>(10 + 2 * r, 10 + 2 * r, 3, 4).unwrap();
        let full = convolve(&im, &k, Boundary::Replicate).unwrap().crop(r, r, 10, 10).unwrap();
        let valid = blur_valid(&im, &k, 10).unwrap();
        assert!(full.data().iter().zip(valid.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn eval_blur_levels() {
        for sigma in [1.0, 2.0, 3.0, 4.0] {
            let b = eval_blur(sigma, 0.002, 9).unwrap();
            assert_eq!(b.sigma_major, sigma);
            assert!(b.sigma_minor <= sigma && b.sigma_minor >= (sigma / 2.0).max(0.3));
            assert_eq!(b.support, min_support(sigma));
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(Corpus::<f64>::new(vec![]).is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(Corpus::<f64>::load(dir.path()).is_err());
    }
}
