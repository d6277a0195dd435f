//! Minimal deterministic tensor library with reverse-mode automatic
//! differentiation.
//!
//! The design is a flat tape: a [`Graph`] records every operation in
//! topological order, forward values are computed eagerly, and
//! [`Graph::backward`] replays the tape once in reverse. There is no implicit
//! global state; distinct graphs are fully independent, so concurrent
//! experiment replicas each own their own graph.
//!
//! Operation coverage is exactly what the convolutional VAE, the latent
//! classifier, and the baseline CNN need: strided 2-D cross-correlation,
//! nearest-neighbor upsampling, batched affine layers, elementwise math,
//! full reductions, cyclic block rolls, softmax cross-entropy, and the
//! diagonal-Gaussian KL term.

mod gradcheck;
mod graph;
mod tensor;


pub use gradcheck::{grad_check, GradCheckReport, REL_ERR_FLOOR};
pub use graph::{Graph, Op, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors produced by tensor construction and graph operations.
#[derive(Debug, Error)]
pub enum AutodiffError {
    /// An operation received operands whose shapes do not fit together.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    /// `backward` was asked to differentiate a non-scalar value.
    #[error("backward expects a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    /// A class label fell outside `[0, classes)`.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        AutodiffError::Shape {
            op,
            detail: detail.into(),
        }
    }
}
