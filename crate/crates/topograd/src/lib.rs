//! Topographic regularization for toy neural networks.
//!
//! The core mechanism: a layer's weight tensor is reshaped onto a 2D
//! *cortical sheet* (one grid cell per output unit, the unit's incoming
//! weights stacked along depth), and training adds a loss term that
//! maximizes the cosine similarity between each depth slice of the sheet
//! and a blurred copy of itself. Minimizing the loss suppresses
//! high-spatial-frequency structure, so nearby units end up with similar
//! weights — the same kind of topographic organization seen in cortex.
//!
//! Module map:
//!
//! - [`tensor`] / [`tape`] — dense f64 tensors with reverse-mode autodiff
//! - [`sheet`] — weight-tensor ↔ cortical-sheet projection
//! - [`loss`] — bilinear blur, the topographic loss, and the composite loss
//! - [`metrics`] — effective dimensionality, smoothness curves, selectivity
//!   t-maps, structural similarity
//! - [`fit`] — temporal-integration-window curve fitting
//! - [`compress`] — L1 unstructured pruning and sheet downsampling
//! - [`model`] / [`task`] / [`train`] — toy classifier, synthetic data,
//!   training loop, tau sweeps, selectivity map reports
//! - [`checkpoint`] — manifest + raw-blob model serialization

pub mod checkpoint;
pub mod compress;
pub mod fit;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod sheet;
pub mod tape;
pub mod task;
pub mod tensor;
pub mod train;

mod rng;

pub use tape::{grad_check, Gradients, Tape, ValueId};
pub use tensor::Tensor;

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or extent mismatch between tensors / layers / sheets.
    #[error("dimension error: {0}")]
    Dim(String),
    /// NaN/Inf, division by zero, undefined statistic, and similar.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Not enough data points to compute a statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// Curve fit failed on every start point.
    #[error("fit failure: {0}")]
    FitFailure(String),
    /// Invalid configuration (bad field values, unknown layer names, ...).
    #[error("config error: {0}")]
    Config(String),
    /// Training diverged.
    #[error("training failure at step {step}: {reason}")]
    Training { step: usize, reason: String },
    /// Checkpoint file corrupt or inconsistent with its manifest.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
