//! Rollable latent space (RLS) core library.
//!
//! Building blocks for an autoencoder whose latent vector is organized into
//! cyclically rollable sub-vectors, such that rolling the latent corresponds
//! to rotating the imaged object in azimuth:
//!
//! - [`autodiff`]: deterministic tensors with reverse-mode differentiation
//! - [`latent`]: the rollable latent layout and its cyclic permutation math
//! - [`network`]: VAE encoder/decoder, latent classifier, baseline CNN
//! - [`train`]: cross-view autoencoder training, roll-augmented classifier
//!   training, Adam, pair sampling, latent-consistency measurement
//! - [`data`]: synthetic rotating-scatterer chip generator and chip file I/O
//!
//! All numeric code is generic over [`scalar::Scalar`]; the aliases below fix
//! `f64`, which is what the experiment pipeline and file formats use.

pub mod autodiff;
pub mod data;
pub mod latent;
pub mod network;
pub mod scalar;
pub mod train;

pub use scalar::Scalar;

/// Scalar type used by the experiment pipeline and the on-disk formats.
pub type Real = f64;

pub type Tensor = autodiff::Tensor<Real>;
pub type Graph = autodiff::Graph<Real>;
pub type LatentCode = latent::LatentCode<Real>;
pub type RollOperator = latent::RollOperator<Real>;
