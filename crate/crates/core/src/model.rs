//! Trained classifiers behind one type: training from labelled tracks,
//! classification and parameter files.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classify::{Classification, ClassificationRule, SequenceClassifier};
use crate::dataset::{Standardizer, TrackSequence};
use crate::error::{Error, Result};
use crate::lds::{constant_acceleration_model, EmConfig};
use crate::params::{self, ParamDoc};
use crate::rnn::{self, LstmCell, LstmStack, Tensor, TrainConfig};
use crate::slds::{self, SldsParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SldsTrainConfig {
    /// Diagonal of the switch transition matrix.
    pub stay_prob: f64,
    /// Frame interval of the constant-acceleration template.
    pub dt: f64,
    /// Initial acceleration-noise variance of the template.
    pub accel_noise: f64,
    /// Initial per-axis observation-noise variance of the template.
    pub obs_noise: f64,
    pub em: EmConfig,
}

impl Default for SldsTrainConfig {
    fn default() -> Self {
        Self {
            stay_prob: 0.97,
            dt: 1.0,
            accel_noise: 1e-4,
            obs_noise: 4e-4,
            em: EmConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SldsClassifier {
    pub name: String,
    pub params: SldsParams,
    pub rule: ClassificationRule,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnClassifier {
    pub name: String,
    pub class_names: Vec<String>,
    pub stack: LstmStack,
    pub standardizer: Standardizer,
    pub rule: ClassificationRule,
}

impl SequenceClassifier for SldsClassifier {
    fn name(&self) -> &str {
        &self.name
    }

    fn class_count(&self) -> usize {
        self.params.num_states()
    }

    fn classify(&self, seq: &TrackSequence) -> Result<Classification> {
        let (class, trace) = slds::classify(&self.params, &seq.observations(), self.rule)?;
        Ok(Classification { class, trace })
    }
}

impl RnnClassifier {
    pub fn features(&self, seq: &TrackSequence) -> Vec<Vec<f64>> {
        self.standardizer.features(seq).into_iter().map(|f| f.to_vec()).collect()
    }
}

impl SequenceClassifier for RnnClassifier {
    fn name(&self) -> &str {
        &self.name
    }

    fn class_count(&self) -> usize {
        self.stack.num_classes()
    }

    fn classify(&self, seq: &TrackSequence) -> Result<Classification> {
        let (class, trace) = rnn::classify(&self.stack, &self.features(seq), self.rule)?;
        Ok(Classification { class, trace })
    }
}

/// Either trained model.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Slds(SldsClassifier),
    Rnn(RnnClassifier),
}

impl Model {
    /// `"slds"` or `"rnn"`.
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Slds(_) => "slds",
            Model::Rnn(_) => "rnn",
        }
    }

    pub fn class_names(&self) -> &[String] {
        match self {
            Model::Slds(m) => m.params.names(),
            Model::Rnn(m) => &m.class_names,
        }
    }

    pub fn rule(&self) -> ClassificationRule {
        match self {
            Model::Slds(m) => m.rule,
            Model::Rnn(m) => m.rule,
        }
    }

    pub fn set_rule(&mut self, rule: ClassificationRule) {
        match self {
            Model::Slds(m) => m.rule = rule,
            Model::Rnn(m) => m.rule = rule,
        }
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        match self {
            Model::Slds(m) => m.name = name.into(),
            Model::Rnn(m) => m.name = name.into(),
        }
    }

    pub fn as_classifier(&self) -> &dyn SequenceClassifier {
        match self {
            Model::Slds(m) => m,
            Model::Rnn(m) => m,
        }
    }

    /// One constant-acceleration LDS per class fitted by exact EM, joined by
    /// a sticky switch matrix. Returns the per-class EM histories too.
    pub fn train_slds(
        train: &[TrackSequence],
        class_names: &[String],
        cfg: &SldsTrainConfig,
    ) -> Result<(Model, Vec<Vec<f64>>)> {
        let template = constant_acceleration_model(cfg.dt, cfg.accel_noise, cfg.obs_noise)?;
        let labelled: Vec<slds::LabelledObs> = train.iter().map(|s| (s.observations(), s.label())).collect();
        let (params, hist) = slds::train_per_class(&labelled, class_names, &template, cfg.stay_prob, &cfg.em)?;
        let m = SldsClassifier {
            name: "slds".into(),
            params,
            rule: ClassificationRule::FinalStep,
        };
        Ok((Model::Slds(m), hist))
    }

    /// BiLSTM on train-standardised `(x, z)` features with every step
    /// labelled by the sequence class. Returns the per-epoch loss too.
    pub fn train_rnn(train: &[TrackSequence], class_names: &[String], cfg: &TrainConfig) -> Result<(Model, Vec<f64>)> {
        if train.is_empty() {
            return Err(Error::EmptySequence);
        }
        let st = Standardizer::fit(train);
        let data: Vec<rnn::LabelledFeatures> = train
            .iter()
            .map(|s| (st.features(s).into_iter().map(|f| f.to_vec()).collect(), s.label()))
            .collect();
        let (stack, hist) = rnn::train(&data, class_names.len(), cfg)?;
        let m = RnnClassifier {
            name: "rnn".into(),
            class_names: class_names.to_vec(),
            stack,
            standardizer: st,
            rule: ClassificationRule::MeanPosterior,
        };
        Ok((Model::Rnn(m), hist))
    }

    pub fn to_doc(&self) -> ParamDoc {
        let mut doc = ParamDoc::new();
        match self {
            Model::Slds(m) => {
                params::put_slds(&mut doc, &m.params);
                doc.set_meta("name", &m.name);
                doc.set_meta("rule", m.rule);
            }
            Model::Rnn(m) => {
                doc.set_meta("kind", "rnn");
                doc.set_meta("name", &m.name);
                doc.set_meta("rule", m.rule);
                doc.set_meta("class_names", m.class_names.join(","));
                doc.set_meta("input_dim", m.stack.input_dim());
                doc.set_meta("hidden", m.stack.hidden());
                doc.set_meta("num_layers", m.stack.num_layers());
                doc.set_meta("num_classes", m.stack.num_classes());
                doc.push_vector("standardizer.mean", &DVector::from_row_slice(&m.standardizer.mean));
                doc.push_vector("standardizer.std", &DVector::from_row_slice(&m.standardizer.std));
                for (l, pair) in m.stack.layers.iter().enumerate() {
                    for (dir, cell) in ["fwd", "bwd"].iter().zip(pair) {
                        let p = format!("layer.{l}.{dir}");
                        doc.push_tensor(&format!("{p}.W"), &cell.w.to_matrix());
                        doc.push_tensor(&format!("{p}.U"), &cell.u.to_matrix());
                        doc.push_vector(&format!("{p}.b"), &DVector::from_vec(cell.b.clone()));
                    }
                }
                doc.push_tensor("head.W", &m.stack.head_w.to_matrix());
                doc.push_vector("head.b", &DVector::from_vec(m.stack.head_b.clone()));
            }
        }
        doc
    }

    pub fn from_doc(doc: &ParamDoc) -> Result<Model> {
        let rule: ClassificationRule = doc.meta("rule")?.parse()?;
        let name = doc.meta("name")?.to_string();
        match doc.meta("kind")? {
            "slds" => Ok(Model::Slds(SldsClassifier {
                name,
                params: params::get_slds(doc)?,
                rule,
            })),
            "rnn" => {
                let class_names = params::split_names(doc.meta("class_names")?);
                let input: usize = doc.meta_parsed("input_dim")?;
                let hidden: usize = doc.meta_parsed("hidden")?;
                let num_layers: usize = doc.meta_parsed("num_layers")?;
                let num_classes: usize = doc.meta_parsed("num_classes")?;
                if num_classes != class_names.len() || num_layers == 0 {
                    return Err(Error::InvalidParameter("inconsistent RNN header".into()));
                }
                let tensor = |name: &str, rows: usize, cols: usize| -> Result<Tensor> {
                    let m = doc.tensor(name)?;
                    if m.nrows() != rows || m.ncols() != cols {
                        return Err(Error::InvalidParameter(format!(
                            "tensor {name} is {}×{}, expected {rows}×{cols}",
                            m.nrows(),
                            m.ncols()
                        )));
                    }
                    Ok(Tensor::from_matrix(m))
                };
                let mut layers = Vec::with_capacity(num_layers);
                for l in 0..num_layers {
                    let inp = if l == 0 { input } else { 2 * hidden };
                    let cell = |dir: &str| -> Result<LstmCell> {
                        let p = format!("layer.{l}.{dir}");
                        Ok(LstmCell {
                            w: tensor(&format!("{p}.W"), 4 * hidden, inp)?,
                            u: tensor(&format!("{p}.U"), 4 * hidden, hidden)?,
                            b: tensor(&format!("{p}.b"), 1, 4 * hidden)?.data,
                        })
                    };
                    layers.push([cell("fwd")?, cell("bwd")?]);
                }
                let stack = LstmStack {
                    layers,
                    head_w: tensor("head.W", num_classes, 2 * hidden)?,
                    head_b: tensor("head.b", 1, num_classes)?.data,
                };
                let pair = |name: &str| -> Result<[f64; 2]> {
                    let t = tensor(name, 1, 2)?;
                    Ok([t.data[0], t.data[1]])
                };
                let standardizer = Standardizer {
                    mean: pair("standardizer.mean")?,
                    std: pair("standardizer.std")?,
                };
                Ok(Model::Rnn(RnnClassifier {
                    name,
                    class_names,
                    stack,
                    standardizer,
                    rule,
                }))
            }
            other => Err(Error::InvalidParameter(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_doc().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        Model::from_doc(&ParamDoc::read(path)?)
    }

    /// The `T×C` probability trace and label for one track.
    pub fn classify(&self, seq: &TrackSequence) -> Result<Classification> {
        self.as_classifier().classify(seq)
    }

    pub fn trace(&self, seq: &TrackSequence) -> Result<DMatrix<f64>> {
        Ok(self.classify(seq)?.trace)
    }
}
