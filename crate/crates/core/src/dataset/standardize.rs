use serde::{Deserialize, Serialize};

use super::{Sample, TrackSequence};

/// Lower bound on a per-coordinate standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-coordinate affine standardisation of `(x, z)`, fitted on a training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer { mean: [0.0; 2], std: [1.0; 2] };

    /// Pooled mean and population standard deviation over every sample.
    ///
    /// # Panics
    /// If `train` holds no samples.
    pub fn fit(train: &[TrackSequence]) -> Self {
        let n: usize = train.iter().map(TrackSequence::len).sum();
        assert!(n > 0, "cannot standardise an empty training set");
        let mut mean = [0.0; 2];
        for s in train.iter().flat_map(TrackSequence::samples) {
            mean[0] += s.x;
            mean[1] += s.z;
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = [0.0; 2];
        for s in train.iter().flat_map(TrackSequence::samples) {
            var[0] += (s.x - mean[0]).powi(2);
            var[1] += (s.z - mean[1]).powi(2);
        }
        let std = var.map(|v| (v / n as f64).sqrt().max(STD_FLOOR));
        Self { mean, std }
    }

    pub fn apply(&self, x: f64, z: f64) -> [f64; 2] {
        [(x - self.mean[0]) / self.std[0], (z - self.mean[1]) / self.std[1]]
    }

    pub fn transform(&self, seq: &TrackSequence) -> TrackSequence {
        seq.with_samples(
            seq.samples()
                .iter()
                .map(|s| {
                    let [x, z] = self.apply(s.x, s.z);
                    Sample { frame: s.frame, x, z }
                })
                .collect(),
        )
    }

    pub fn invert(&self, seq: &TrackSequence) -> TrackSequence {
        seq.with_samples(
            seq.samples()
                .iter()
                .map(|s| Sample {
                    frame: s.frame,
                    x: s.x * self.std[0] + self.mean[0],
                    z: s.z * self.std[1] + self.mean[1],
                })
                .collect(),
        )
    }

    /// Standardised `[x, z]` features per sample.
    pub fn features(&self, seq: &TrackSequence) -> Vec<[f64; 2]> {
        seq.samples().iter().map(|s| self.apply(s.x, s.z)).collect()
    }
}

/// Fits on `train` only and applies the transform to both splits.
pub fn standardize(
    train: &[TrackSequence],
    test: &[TrackSequence],
) -> (Standardizer, Vec<TrackSequence>, Vec<TrackSequence>) {
    let st = Standardizer::fit(train);
    let tr = train.iter().map(|s| st.transform(s)).collect();
    let te = test.iter().map(|s| st.transform(s)).collect();
    (st, tr, te)
}
