//! Fixtures shared by the criterion benchmarks.

use nalgebra::DVector;
use switchbench::dataset::{synthesize, SynthDataset, SynthSpec};
use switchbench::lds::constant_acceleration_model;
use switchbench::{LdsParams, Result};

/// The default synthetic dataset for a fixed seed.
pub fn synthetic(seed: u64) -> Result<SynthDataset> {
    synthesize(&SynthSpec::default_benchmark(seed)?)
}

/// A constant-acceleration model and `len` observations sampled from it.
pub fn kinematic_track(len: usize, seed: u64) -> Result<(LdsParams, Vec<DVector<f64>>)> {
    let p = constant_acceleration_model(1.0, 1e-4, 4e-4)?;
    let (_, obs) = switchbench::lds::sample(&p, len, seed)?;
    Ok((p, obs))
}
