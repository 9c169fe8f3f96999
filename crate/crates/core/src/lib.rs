//! Collaborative blind deblurring toolkit.
//!
//! * [`imaging`]: images, kernels, convolution, noise, PSNR and kernel similarity.
//! * [`synth`]: Gaussian / motion kernels, degradation stacks, kernel grids.
//! * [`estimate`]: multi-image Fourier kernel estimation, its dense oracle
//!   and the collaboration sweep.
//! * [`patches`]: uniform tiling, quadrant-symmetric placements, windowed stitching.
//! * [`nn`]: a small reverse-mode tensor engine, stack pooling layers and the UNet family.
//! * [`train`]: stack L1 loss, Adam, learning-rate schedule, toy training and evaluation.
//! * [`cli`]: the `collab-deblur` command-line front end.
//!
//! All numeric types are generic over [`Scalar`]; the aliases below fix the
//! default `f64` precision.

pub mod cli;
pub mod error;
pub mod estimate;
pub mod imaging;
pub mod kv;
pub mod nn;
pub mod patches;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Image = imaging::Image<f64>;
pub type Image32 = imaging::Image<f32>;
pub type Kernel = imaging::Kernel<f64>;
pub type Kernel32 = imaging::Kernel<f32>;
pub type PatchStack = patches::PatchStack<f64>;
pub type PatchStack32 = patches::PatchStack<f32>;
pub type Tensor = nn::Tensor<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Unet = nn::Unet<f64>;
pub type Unet32 = nn::Unet<f32>;
