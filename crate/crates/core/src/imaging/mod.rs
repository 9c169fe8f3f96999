//! Image containers, convolution, noise and the two scalar quality metrics.

mod convolve;
pub mod fft;
mod image;
pub mod io;
mod kernel;
mod metrics;
mod noise;

pub use convolve::{convolve, convolve_circular_fft, convolve_per_channel, kernel_to_plane, Boundary};
pub(crate) use convolve::convolve_circular_spectrum;
pub use image::Image;
pub use kernel::{Kernel, RawKernel};
pub use metrics::{kernel_psnr, kernel_similarity, ksim_search, mse, psnr, psnr_from_mse, KsimMatch, PSNR_CAP_DB};
pub use noise::add_gaussian_noise;
