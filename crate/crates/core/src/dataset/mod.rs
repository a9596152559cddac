//! Labelled pedestrian tracks: the in-memory model, file formats, the
//! synthetic generator and coordinate standardisation.

mod io;
mod standardize;
mod synth;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    format_manifest, format_sequence, load_manifest, load_sequence, load_sequence_with, load_split, write_manifest,
    write_sequence, DatasetManifest,
    ManifestEntry, Split,
};
pub use standardize::{standardize, Standardizer, STD_FLOOR};
pub use synth::{synthesize, ClassDynamics, SynthDataset, SynthSpec};

/// The four behaviour classes, in confusion-matrix order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Behaviour {
    BendingIn = 0,
    Crossing = 1,
    Starting = 2,
    Stopping = 3,
}

impl Behaviour {
    pub const ALL: [Behaviour; 4] = [Self::BendingIn, Self::Crossing, Self::Starting, Self::Stopping];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::BendingIn => "BendingIn",
            Self::Crossing => "Crossing",
            Self::Starting => "Starting",
            Self::Stopping => "Stopping",
        }
    }
}

impl fmt::Display for Behaviour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Behaviour {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

/// `BendingIn, Crossing, Starting, Stopping`
pub fn default_class_names() -> Vec<String> {
    Behaviour::ALL.iter().map(|b| b.name().to_string()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub frame: i64,
    /// metres
    pub x: f64,
    /// metres
    pub z: f64,
}

/// A labelled `(frame, x, z)` trajectory.
///
/// Frames are strictly increasing and coordinates finite. Tracks read from
/// disk have at least two samples; truncation may produce a single sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSequence {
    id: String,
    label: usize,
    samples: Vec<Sample>,
}

impl TrackSequence {
    pub fn new(id: impl Into<String>, label: usize, samples: Vec<Sample>) -> Result<Self> {
        let id = id.into();
        if samples.is_empty() {
            return Err(Error::InvalidSequence(format!("{id}: no samples")));
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.x.is_finite() && s.z.is_finite()) {
                return Err(Error::InvalidSequence(format!("{id}: non-finite coordinate at row {i}")));
            }
            if i > 0 && s.frame <= samples[i - 1].frame {
                return Err(Error::InvalidSequence(format!("{id}: frames not increasing at row {i}")));
            }
        }
        Ok(Self { id, label, samples })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `min(len, T)` samples; id and label are kept. `len` must be ≥ 1.
    pub fn prefix(&self, len: usize) -> TrackSequence {
        assert!(len >= 1, "prefix length must be at least 1");
        TrackSequence {
            id: self.id.clone(),
            label: self.label,
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
        }
    }

    /// `(x, z)` observation vectors.
    pub fn observations(&self) -> Vec<DVector<f64>> {
        self.samples.iter().map(|s| DVector::from_vec(vec![s.x, s.z])).collect()
    }

    pub(crate) fn with_samples(&self, samples: Vec<Sample>) -> TrackSequence {
        TrackSequence {
            id: self.id.clone(),
            label: self.label,
            samples,
        }
    }
}
