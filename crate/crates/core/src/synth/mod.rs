//! Blur kernels, degradation stacks and synthetic scenes.

mod gaussian;
mod grid;
mod motion;
mod scenes;
mod stack;

pub use gaussian::{default_support, gaussian_kernel, min_support, sample_blur_config, BlurConfig};
pub use grid::{kernel_grid_sample_quadrants, GridEntry, KernelGrid};
pub use motion::motion_kernel;
pub use scenes::{dead_leaves, dead_leaves_pool};
pub use stack::make_stack;
