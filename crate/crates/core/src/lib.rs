//! Image structure subspace learning with SSIM-based reconstruction error.
//!
//! The crate learns per-block orthonormal bases that minimize the SSIM
//! reconstruction distance of 8×8 image blocks (with a kernelized variant
//! and PCA / kernel PCA baselines), generates MSE-calibrated distortion
//! datasets, and recognizes distortion types by 1NN voting in the learned
//! subspaces.
//!
//! All numerics are generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the common double-precision instantiations. Quoted
//! tolerances assume `f64`.

pub mod classify;
pub mod distortion;
pub mod error;
pub mod image;
pub mod isca;
pub mod kernel;
pub mod model_io;
pub mod pca;
pub mod scalar;
pub mod ssim;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision image.
pub type GrayImage64 = image::GrayImage<f64>;
/// Double-precision block decomposition.
pub type BlockSet64 = image::BlockSet<f64>;
/// Double-precision ISCA model.
pub type IscaModel64 = isca::IscaModel<f64>;
/// Double-precision kernel ISCA model.
pub type KernelIscaModel64 = kernel::KernelIscaModel<f64>;
/// Double-precision PCA baseline.
pub type PcaModel64 = pca::PcaModel<f64>;
/// Double-precision kernel PCA baseline.
pub type KernelPcaModel64 = pca::KernelPcaModel<f64>;
/// Double-precision model wrapper.
pub type Model64 = model_io::Model<f64>;

/// Single-precision image.
pub type GrayImage32 = image::GrayImage<f32>;
/// Single-precision ISCA model.
pub type IscaModel32 = isca::IscaModel<f32>;
