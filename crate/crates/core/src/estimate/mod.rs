//! Non-blind multi-image kernel estimation.
//!
//! Given pairs `(x_n, y_n)` with `y_n = k * x_n + noise`, the regularized
//! least-squares kernel is computed per frequency as
//! `K = sum conj(X_n) Y_n / (sum |X_n|^2 + lambda N)`. A dense spatial solver
//! provides an independent check, and the sweep measures how kernel quality
//! improves with the number of pairs.

mod fourier;
mod oracle;
mod sweep;

pub use fourier::{
    crop_at_origin, crop_max_energy, estimate_kernel_fourier, FourierAccumulator, KernelEstimate, PairSet,
};
pub use oracle::{estimate_kernel_spatial_oracle, OracleEstimate, ORACLE_MAX_EXTENT, ORACLE_MAX_SUPPORT};
pub use sweep::{run_collaboration_sweep, SweepParams, SweepReport, SweepRow};
