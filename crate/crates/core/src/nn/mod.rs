//! Minimal reverse-mode tensor engine and the collaborative UNet family.
//!
//! Tensors use the `[B * N, C, H, W]` layout: `B` stacks of `N` images each,
//! flattened into the leading dimension. Stack pooling operates across the
//! `N` slots of each stack at every channel and pixel.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod layers;
pub mod ops;
pub mod pooling;
mod tensor;
mod unet;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use layers::Params;
pub use pooling::PoolingKind;
pub use tensor::Tensor;
pub use unet::{ModelConfig, Unet};
