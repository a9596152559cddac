//! Sequence classification with switching linear dynamical systems (GPB2
//! inference, EM learning) and stacked bidirectional LSTMs, plus the
//! truncated-sequence benchmark used to compare them.
//!
//! Modules, bottom-up:
//!
//! - [`gaussian`]: Gaussian densities, conditioning and moment-matching collapse.
//! - [`lds`]: Kalman filter, RTS smoother, EM and the constant-acceleration model.
//! - [`slds`]: GPB2 filtering/smoothing, exact enumeration, approximate EM, classification.
//! - [`rnn`]: the three-layer BiLSTM classifier with BPTT and ADAM.
//! - [`dataset`]: track files, manifests, the synthetic generator, standardisation.
//! - [`eval`]: the truncation grid, metrics, confusion matrices and report emission.
//! - [`params`]: the versioned text parameter format shared by both models.

#![allow(clippy::needless_range_loop)]

pub mod classify;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod lds;
pub mod model;
pub mod params;
pub mod rnn;
pub mod seed;
pub mod slds;

pub use classify::{Classification, ClassificationRule, SequenceClassifier};
pub use dataset::{Behaviour, TrackSequence};
pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, EvalReport, GridLength};
pub use gaussian::{Gaussian, GaussianMixture, WeightedGaussian};
pub use lds::{EmConfig, LdsParams};
pub use model::Model;
pub use rnn::{LstmStack, TrainConfig};
pub use slds::SldsParams;
