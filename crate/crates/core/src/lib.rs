//! Damping-frequency and damping-ratio estimation from pointing-device
//! trajectories.
//!
//! Two estimators are provided: an order-4 linear-predictive-coding filter
//! ([`lpc`]) and a mass-spring-damper step-response fit by prediction-error
//! minimization ([`msd`]). The remaining modules reproduce a validation
//! protocol around them: GOF-thresholded rank correlation between the two
//! estimators ([`stats`]), per-participant SVM stress classification
//! ([`classify`], [`svm`]), ground-truth-known synthetic trials ([`synth`]) and
//! the file-based pipeline driven by the `stiffsense` binary ([`pipeline`]).

pub mod classify;
pub mod error;
pub mod lpc;
pub mod msd;
pub mod optim;
pub mod pipeline;
pub mod seed;
pub mod signal;
pub mod stats;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};
