//! Seeded synthetic stand-in for the pedestrian track benchmark.
//!
//! Each class is a linear-Gaussian system over `[x, z, ẋ, ż, ẍ, z̈]`
//! (metres, metres/frame, metres/frame²) whose deterministic part reproduces
//! the behaviour kinematically:
//!
//! - BendingIn: walking along z, turning gradually towards the road until
//!   heading diagonally, with extra lateral process noise.
//! - Crossing: constant velocity along x.
//! - Starting: from standstill, accelerating towards walking speed.
//! - Stopping: walking along x, decelerating to near zero.
//!
//! Tracks are drawn with [`slds::sample`] from a non-switching SLDS pinned to
//! the class state.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::io::{write_manifest, write_sequence, DatasetManifest, ManifestEntry};
use super::{Behaviour, Sample, TrackSequence};
use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::lds::{kinematic_transition, position_selector, LdsParams};
use crate::{params, seed, slds, SldsParams};

/// Walking speed, metres per frame (≈1.4 m/s at 15 fps).
const WALK: f64 = 0.09;
/// Per-frame velocity retention while stopping.
const STOP_DECAY: f64 = 0.90;
/// Per-frame decay of the remaining speed gap while starting.
const START_DECAY: f64 = 0.97;
/// Per-frame decay of the remaining turn while bending in.
const BEND_DECAY: f64 = 0.98;
/// Decay of free acceleration states.
const ACCEL_DAMPING: f64 = 0.8;

const POS_X: (f64, f64) = (-4.0, 0.3);
/// Starting pedestrians wait at the kerb rather than on the sidewalk.
const KERB_X: f64 = -1.0;
const POS_Z: (f64, f64) = (12.0, 0.5);
const VEL_STD: f64 = 0.005;
const ACCEL_STD: f64 = 0.0004;
const VEL_NOISE_STD: f64 = 0.0005;
const LATERAL_NOISE_STD: f64 = 0.001;
const OBS_NOISE_STD: f64 = 0.015;

/// Generative dynamics and length range of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassDynamics {
    pub name: String,
    pub dynamics: LdsParams,
    pub len_min: usize,
    pub len_max: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub classes: Vec<ClassDynamics>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

fn diag(values: [f64; 6]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(&values))
}

fn behaviour_dynamics(b: Behaviour) -> Result<LdsParams> {
    let mut a = kinematic_transition(1.0);
    let (vx, vz, ax, az);
    let mut x0 = POS_X.0;
    let (mut acc_x_std, mut acc_z_std) = (ACCEL_STD, ACCEL_STD);
    let mut vel_noise = [VEL_NOISE_STD, VEL_NOISE_STD];
    match b {
        Behaviour::BendingIn => {
            // geometric accelerations settle the heading at 45°: half the
            // speed along z is handed over to x
            let r = BEND_DECAY;
            a[(4, 4)] = r;
            a[(5, 5)] = r;
            (vx, vz, ax, az) = (0.0, WALK, 0.5 * (1.0 - r) * WALK, 0.5 * (r - 1.0) * WALK);
            vel_noise[0] = LATERAL_NOISE_STD;
        }
        Behaviour::Crossing => {
            a[(4, 4)] = ACCEL_DAMPING;
            a[(5, 5)] = ACCEL_DAMPING;
            (vx, vz, ax, az) = (WALK, 0.0, 0.0, 0.0);
            (acc_x_std, acc_z_std) = (0.0, 0.0);
        }
        Behaviour::Starting => {
            // ẍ decays geometrically so ẋ approaches ẋ₀ + ẍ₀/(1−ρ)
            a[(4, 4)] = START_DECAY;
            a[(5, 5)] = ACCEL_DAMPING;
            (vx, vz, ax, az) = (0.0, 0.0, (1.0 - START_DECAY) * WALK, 0.0);
            x0 = KERB_X;
        }
        Behaviour::Stopping => {
            let r = STOP_DECAY;
            a[(4, 2)] = r - 1.0;
            a[(4, 4)] = r - 1.0;
            a[(5, 5)] = ACCEL_DAMPING;
            (vx, vz, ax, az) = (WALK, 0.0, (r - 1.0) * WALK, 0.0);
        }
    }
    let prior_mean = DVector::from_row_slice(&[x0, POS_Z.0, vx, vz, ax, az]);
    let prior_cov = diag([
        POS_X.1.powi(2),
        POS_Z.1.powi(2),
        VEL_STD.powi(2),
        VEL_STD.powi(2),
        acc_x_std.powi(2),
        acc_z_std.powi(2),
    ]);
    let q = diag([0.0, 0.0, vel_noise[0].powi(2), vel_noise[1].powi(2), 0.0, 0.0]);
    LdsParams::new(
        a,
        position_selector(),
        q,
        DMatrix::identity(2, 2) * OBS_NOISE_STD.powi(2),
        Gaussian::new(prior_mean, prior_cov)?,
    )
}

impl SynthSpec {
    /// Four behaviour classes, 10 train and 8 test tracks each, lengths
    /// 60–220 frames (30–80 for Starting).
    pub fn default_benchmark(seed: u64) -> Result<Self> {
        let classes = Behaviour::ALL
            .iter()
            .map(|&b| {
                let (len_min, len_max) = if b == Behaviour::Starting { (30, 80) } else { (60, 220) };
                Ok(ClassDynamics {
                    name: b.name().to_string(),
                    dynamics: behaviour_dynamics(b)?,
                    len_min,
                    len_max,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            classes,
            train_per_class: 10,
            test_per_class: 8,
            seed,
        })
    }

    /// Same dynamics with process and measurement noise removed.
    pub fn noiseless(mut self) -> Result<Self> {
        for c in &mut self.classes {
            let d = &c.dynamics;
            c.dynamics = LdsParams::new(
                d.transition().clone(),
                d.emission().clone(),
                DMatrix::zeros(d.state_dim(), d.state_dim()),
                DMatrix::zeros(d.obs_dim(), d.obs_dim()),
                d.prior().clone(),
            )?;
        }
        Ok(self)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.classes.is_empty() {
            return bad("no classes".into());
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("per-class counts must be at least 1".into());
        }
        let (n, m) = (self.classes[0].dynamics.state_dim(), self.classes[0].dynamics.obs_dim());
        if m != 2 {
            return bad(format!("dynamics must emit (x, z), got {m} outputs"));
        }
        for c in &self.classes {
            if c.len_min < 2 || c.len_min > c.len_max {
                return bad(format!("{}: invalid length range {}..={}", c.name, c.len_min, c.len_max));
            }
            if c.dynamics.state_dim() != n || c.dynamics.obs_dim() != m {
                return bad(format!("{}: dynamics dimensions differ", c.name));
            }
        }
        Ok(())
    }

    /// The generating model as a non-switching SLDS (identity switch matrix,
    /// uniform switch prior).
    pub fn ground_truth(&self) -> Result<SldsParams> {
        let s = self.classes.len();
        SldsParams::new(
            self.class_names(),
            self.classes.iter().map(|c| c.dynamics.clone()).collect(),
            DMatrix::identity(s, s),
            DVector::from_element(s, 1.0 / s as f64),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub class_names: Vec<String>,
    pub train: Vec<TrackSequence>,
    pub test: Vec<TrackSequence>,
    pub ground_truth: SldsParams,
}

/// Samples every split deterministically from `spec.seed`.
pub fn synthesize(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let ground_truth = spec.ground_truth()?;
    let s = spec.classes.len();
    let mut splits = Vec::with_capacity(2);
    for (split, per_class) in [("train", spec.train_per_class), ("test", spec.test_per_class)] {
        let mut seqs = Vec::with_capacity(per_class * s);
        for (k, class) in spec.classes.iter().enumerate() {
            let mut pinned_prior = DVector::zeros(s);
            pinned_prior[k] = 1.0;
            let pinned = SldsParams::new(
                ground_truth.names().to_vec(),
                ground_truth.states().to_vec(),
                DMatrix::identity(s, s),
                pinned_prior,
            )?;
            for i in 0..per_class {
                let mut rng = seed::component_rng(spec.seed, &format!("synth/{split}/{k}/{i}"));
                let len = rng.random_range(class.len_min..=class.len_max);
                let (_, _, obs) = slds::sample(&pinned, len, rng.random())?;
                let samples = obs
                    .iter()
                    .enumerate()
                    .map(|(t, v)| Sample { frame: t as i64, x: v[0], z: v[1] })
                    .collect();
                let id = format!("{split}_{:03}_{}", seqs.len(), class.name);
                seqs.push(TrackSequence::new(id, k, samples)?);
            }
        }
        splits.push(seqs);
    }
    let test = splits.pop().expect("two splits");
    let train = splits.pop().expect("two splits");
    Ok(SynthDataset {
        class_names: spec.class_names(),
        train,
        test,
        ground_truth,
    })
}

impl SynthDataset {
    /// Writes `manifest.txt`, `train/*.csv`, `test/*.csv` and
    /// `ground_truth.params` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<DatasetManifest> {
        let mut manifest = DatasetManifest {
            root: dir.to_path_buf(),
            class_names: self.class_names.clone(),
            train: Vec::new(),
            test: Vec::new(),
        };
        for (split, seqs) in [("train", &self.train), ("test", &self.test)] {
            fs::create_dir_all(dir.join(split))?;
            for seq in seqs {
                let rel = Path::new(split).join(format!("{}.csv", seq.id()));
                write_sequence(seq, &self.class_names, dir.join(&rel))?;
                let entry = ManifestEntry { path: rel, label: None };
                match split {
                    "train" => manifest.train.push(entry),
                    _ => manifest.test.push(entry),
                }
            }
        }
        write_manifest(&manifest, dir.join("manifest.txt"))?;
        params::write_slds(&self.ground_truth, dir.join("ground_truth.params"))?;
        Ok(manifest)
    }
}
