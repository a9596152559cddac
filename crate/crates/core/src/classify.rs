//! Turning per-timestep class probabilities into one sequence label.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::TrackSequence;
use crate::error::{Error, Result};

/// Sequence-level aggregation of a `T×C` probability trace. Ties always
/// resolve to the lowest class index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationRule {
    /// argmax of the last row
    #[default]
    FinalStep,
    /// argmax of the column means
    MeanPosterior,
    /// argmax of Σ_t ln p_t
    SumLog,
}

impl ClassificationRule {
    pub const ALL: [ClassificationRule; 3] = [Self::FinalStep, Self::MeanPosterior, Self::SumLog];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::FinalStep => "final_step",
            Self::MeanPosterior => "mean_posterior",
            Self::SumLog => "sum_log",
        }
    }

    pub fn aggregate(&self, trace: &DMatrix<f64>) -> usize {
        let t_len = trace.nrows();
        assert!(t_len > 0 && trace.ncols() > 0, "empty probability trace");
        match self {
            Self::FinalStep => argmax(trace.row(t_len - 1).iter().copied()),
            Self::MeanPosterior => argmax(trace.column_iter().map(|c| c.sum() / t_len as f64)),
            Self::SumLog => argmax(
                trace
                    .column_iter()
                    .map(|c| c.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()).sum::<f64>()),
            ),
        }
    }
}

impl fmt::Display for ClassificationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassificationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown classification rule {s:?}")))
    }
}

/// Relative gap below which two scores count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Index of the largest value; the first one wins ties, including scores
/// that differ only by rounding (see [`TIE_TOLERANCE`]).
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        let beats = if best_val.is_finite() {
            v > best_val + TIE_TOLERANCE * best_val.abs().max(1.0)
        } else {
            v > best_val
        };
        if beats {
            best = i;
            best_val = v;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub class: usize,
    /// `T×C` per-timestep class probabilities.
    pub trace: DMatrix<f64>,
}

/// Anything the evaluation harness can run over a truncated track.
pub trait SequenceClassifier: Send + Sync {
    fn name(&self) -> &str;
    fn class_count(&self) -> usize;
    fn classify(&self, seq: &TrackSequence) -> Result<Classification>;
}
