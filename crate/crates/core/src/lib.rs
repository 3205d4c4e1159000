//! Generation of hardware-constrained non-Cartesian 2D k-space sampling
//! trajectories from target sampling densities, retrospective acquisition
//! simulation, compressed-sensing reconstruction and image-quality scoring.
//!
//! The pipeline, end to end:
//!
//! 1. [`density`] builds a target sampling density (parametric
//!    variable-density, spectrum/log-spectrum averages, or a learned
//!    probability map under a sparsity budget).
//! 2. [`sparkling`] optimizes a multi-shot trajectory whose empirical
//!    distribution matches that density, subject to the gradient/slew
//!    constraint set in [`constraints`].
//! 3. [`nufft`] evaluates the non-uniform Fourier operators used to
//!    simulate acquisition and reconstruct, with Pipe-style density
//!    compensation weights.
//! 4. [`recon`] runs self-calibrating compressed-sensing reconstruction
//!    (FISTA over orthogonal wavelet coefficients).
//! 5. [`metrics`] scores reconstructions (masked SSIM/PSNR) and measures
//!    how closely a point set matches a density.

pub mod constraints;
pub mod density;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nufft;
pub mod phantom;
pub mod recon;
pub mod sparkling;
pub mod types;
pub mod wavelet;

pub use error::{Error, Result};
pub use types::{
    DensityGrid, GradientWaveform, HardwareConfig, Trajectory, TrajectorySpec,
};

pub(crate) mod fft;
