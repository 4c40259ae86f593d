//! Low-field MR image enhancement from undersampled k-space.
//!
//! The crate covers the whole pipeline: slice containers and file formats
//! ([`tensorio`]), Fourier operators and undersampling masks ([`kspace`]),
//! the stochastic low-field simulator ([`degrade`]), the dual-channel U-Net
//! ([`model`]), cross-validated training ([`training`]), ensemble inference
//! with uncertainty maps ([`ensemble`]) and image-quality metrics
//! ([`metrics`]).

pub mod degrade;
pub mod ensemble;
pub mod error;
pub mod kspace;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod tensorio;
pub mod training;

pub use error::{Error, Result};
