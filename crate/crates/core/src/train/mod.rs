//! Optimization procedures for the three-phase protocol.
//!
//! Phase 1 trains the cross-view autoencoder: a pair batch holds a source
//! chip at azimuth `theta_i` and a target chip of the same object at
//! `theta_j`; the sampled latent of the source is rolled by the bin
//! difference `j - i` before decoding, and the reconstruction is scored
//! against the target. Phase 2 freezes the encoder and trains classifier
//! heads on posterior means, optionally rolling each feature by a fresh
//! uniform shift as feature-space augmentation; the baseline CNN trains
//! directly on pixels. All loops are strictly sequential and seeded, so a
//! config reproduces its weights bitwise.

mod adam;
mod autoencoder;
mod classifier;
mod consistency;
mod pairs;

pub use adam::{Adam, AdamParams};
pub use autoencoder::{rls_train_step, train_rls_autoencoder, EpochLoss};
pub use classifier::{
    classifier_train_step, featurize, predict_baseline, predict_on_features, train_baseline,
    train_classifier, train_classifier_on_features,
};
pub use consistency::{cosine, latent_consistency, ConsistencyReport};
pub use pairs::{PairBatch, PairSampler};

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor};
use crate::data::Chip;
use crate::network::{NetworkError, CHIP_SIZE};
use crate::scalar::{real, Scalar};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite loss at step {step} (seed {seed})")]
    NonFinite { step: usize, seed: u64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("no object instance has chips in two or more azimuth bins")]
    NoPairs,
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
}

/// Knobs of one training phase. The seed is mandatory; nothing in the
/// pipeline touches ambient entropy.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// KL weight `beta`; ramped linearly over the first tenth of all steps.
    pub kl_weight: f64,
    pub seed: u64,
    pub subvectors: usize,
    pub bins: usize,
    /// Roll-augmentation toggle for classifier training.
    pub augmentation: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("subvectors", self.subvectors),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TrainError::BadConfig(format!("{name} must be positive")));
            }
        }
        // bins = 1 is allowed: it degenerates roll augmentation to a no-op
        if self.bins == 0 {
            return Err(TrainError::BadConfig("bins must be positive".to_string()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig("learning_rate must be positive".to_string()));
        }
        if self.kl_weight < 0.0 {
            return Err(TrainError::BadConfig("kl_weight must be nonnegative".to_string()));
        }
        Ok(())
    }
}

/// Loss components of one autoencoder step, evaluated before the update.
/// `total == reconstruction + beta * kl` with the beta in effect that step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    /// Mean squared error per pixel.
    pub reconstruction: f64,
    /// Mean KL per chip.
    pub kl: f64,
    /// Effective KL weight (after warm-up).
    pub beta: f64,
    pub total: f64,
}

/// Stacks chips into a `[B, 1, 64, 64]` tensor.
pub fn chips_to_tensor<F: Scalar>(chips: &[&Chip]) -> Tensor<F> {
    let mut data = Vec::with_capacity(chips.len() * CHIP_SIZE * CHIP_SIZE);
    for chip in chips {
        data.extend(chip.pixels.iter().map(|&p| real::<F>(p)));
    }
    Tensor::from_vec(vec![chips.len(), 1, CHIP_SIZE, CHIP_SIZE], data).expect("chip layout")
}

/// Linear KL warm-up: full weight after the first tenth of all steps.
pub(crate) fn beta_at_step(kl_weight: f64, step: usize, total_steps: usize) -> f64 {
    let warmup = (total_steps as f64 * 0.1).ceil().max(1.0);
    kl_weight * ((step + 1) as f64 / warmup).min(1.0)
}
