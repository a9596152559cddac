//! Truncated-sequence evaluation: every test track is cut to its first `L`
//! samples for each `L` on a grid, classified, and scored per length.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::classify::SequenceClassifier;
use crate::dataset::TrackSequence;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// One point of the truncation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GridLength {
    Samples(usize),
    Complete,
}

impl fmt::Display for GridLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridLength::Samples(n) => write!(f, "{n}"),
            GridLength::Complete => f.write_str("complete"),
        }
    }
}

impl Serialize for GridLength {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            GridLength::Samples(n) => s.serialize_u64(*n as u64),
            GridLength::Complete => s.serialize_str("complete"),
        }
    }
}

impl<'de> Deserialize<'de> for GridLength {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(GridLength::Samples(n)),
            Raw::S(s) if s == "complete" => Ok(GridLength::Complete),
            Raw::S(s) => Err(serde::de::Error::custom(format!("invalid grid length {s:?}"))),
        }
    }
}

/// Parses `start:step:end`, `start:step:complete` or `complete`.
///
/// With `complete` as the end, lengths run up to `max_len` and the complete
/// sequence is appended.
pub fn parse_grid(spec: &str, max_len: usize) -> Result<Vec<GridLength>> {
    let bad = |m: &str| Error::InvalidGrid(format!("{spec:?}: {m}"));
    let spec_t = spec.trim();
    if spec_t == "complete" {
        return Ok(vec![GridLength::Complete]);
    }
    let parts: Vec<&str> = spec_t.split(':').collect();
    let [start, step, end] = parts[..] else {
        return Err(bad("expected start:step:end"));
    };
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(&format!("{what} is not a count")));
    let start = num(start, "start")?;
    let step = num(step, "step")?;
    if start == 0 || step == 0 {
        return Err(bad("start and step must be at least 1"));
    }
    let (end, complete) = if end == "complete" { (max_len, true) } else { (num(end, "end")?, false) };
    if !complete && start > end {
        return Err(bad("start exceeds end"));
    }
    let mut grid: Vec<GridLength> = (start..=end).step_by(step).map(GridLength::Samples).collect();
    if complete {
        grid.push(GridLength::Complete);
    }
    Ok(grid)
}

fn validate_grid(grid: &[GridLength]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidGrid("grid must be strictly ascending with complete last".into()));
    }
    if grid.contains(&GridLength::Samples(0)) {
        return Err(Error::InvalidGrid("lengths must be at least 1".into()));
    }
    Ok(())
}

/// What to do with tracks shorter than the requested length.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationPolicy {
    /// use the whole track
    #[default]
    Clamp,
    /// leave it out at that length
    Skip,
}

impl FromStr for TruncationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clamp" => Ok(Self::Clamp),
            "skip" => Ok(Self::Skip),
            _ => Err(Error::InvalidParameter(format!("unknown truncation policy {s:?}"))),
        }
    }
}

/// The first `min(len, T)` samples.
pub fn truncate(seq: &TrackSequence, len: usize) -> TrackSequence {
    seq.prefix(len)
}

/// `counts[true][pred]`
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        assert!(counts.iter().all(|r| r.len() == counts.len()), "confusion matrix must be square");
        Self { counts }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, r: usize) -> u64 {
        self.counts[r].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` where nothing was predicted as that class
    pub precision: Vec<Option<f64>>,
    /// `None` where the class never occurs
    pub recall: Vec<Option<f64>>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if cm.classes() == 0 || total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let c = cm.classes();
    let diag: u64 = (0..c).map(|k| cm.counts[k][k]).sum();
    Ok(Metrics {
        accuracy: diag as f64 / total as f64,
        precision: (0..c).map(|k| ratio(cm.counts[k][k], cm.col_sum(k))).collect(),
        recall: (0..c).map(|k| ratio(cm.counts[k][k], cm.row_sum(k))).collect(),
    })
}

/// Mean of the defined entries.
pub fn macro_average(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rows,
    Columns,
}

/// Divides each row (or column) by its sum; empty ones become all `None`.
pub fn normalized(cm: &ConfusionMatrix, axis: Axis) -> Vec<Vec<Option<f64>>> {
    let c = cm.classes();
    (0..c)
        .map(|r| {
            (0..c)
                .map(|k| match axis {
                    Axis::Rows => ratio(cm.counts[r][k], cm.row_sum(r)),
                    Axis::Columns => ratio(cm.counts[r][k], cm.col_sum(k)),
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthResult {
    pub length: GridLength,
    /// Number of tracks classified at this length.
    pub evaluated: usize,
    pub accuracy: Option<f64>,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub row_normalized: Vec<Vec<Option<f64>>>,
    pub column_normalized: Vec<Vec<Option<f64>>>,
}

impl LengthResult {
    fn from_confusion(length: GridLength, cm: ConfusionMatrix) -> Self {
        let c = cm.classes();
        let m = metrics(&cm).ok();
        let (accuracy, precision, recall) = match m {
            Some(m) => (Some(m.accuracy), m.precision, m.recall),
            None => (None, vec![None; c], vec![None; c]),
        };
        Self {
            length,
            evaluated: cm.total() as usize,
            accuracy,
            macro_precision: macro_average(&precision),
            macro_recall: macro_average(&recall),
            precision,
            recall,
            row_normalized: normalized(&cm, Axis::Rows),
            column_normalized: normalized(&cm, Axis::Columns),
            confusion: cm,
        }
    }
}

/// Per-step class probabilities of one complete test track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceTrace {
    pub seq_id: String,
    pub label: usize,
    pub predicted: usize,
    pub frames: Vec<i64>,
    pub probs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub results: Vec<LengthResult>,
    pub traces: Vec<SequenceTrace>,
}

impl ModelReport {
    pub fn accuracy_at(&self, length: GridLength) -> Option<f64> {
        self.results.iter().find(|r| r.length == length).and_then(|r| r.accuracy)
    }

    /// Largest defined accuracy on the curve.
    pub fn best_accuracy(&self) -> Option<f64> {
        self.results.iter().filter_map(|r| r.accuracy).reduce(f64::max)
    }
}

/// Classifies every test track at every grid length.
pub fn evaluate(
    classifier: &dyn SequenceClassifier,
    test: &[TrackSequence],
    grid: &[GridLength],
    policy: TruncationPolicy,
    keep_traces: bool,
) -> Result<ModelReport> {
    validate_grid(grid)?;
    let c = classifier.class_count();
    if let Some(bad) = test.iter().find(|s| s.label() >= c) {
        return Err(Error::InvalidLabel { label: bad.label(), classes: c });
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..test.len()).map(move |s| (g, s)))
        .filter(|&(g, s)| match (grid[g], policy) {
            (GridLength::Samples(l), TruncationPolicy::Skip) => test[s].len() >= l,
            _ => true,
        })
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(g, s)| {
            let seq = match grid[g] {
                GridLength::Samples(l) => truncate(&test[s], l),
                GridLength::Complete => test[s].clone(),
            };
            classifier.classify(&seq)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut confusions = vec![ConfusionMatrix::new(c); grid.len()];
    for (&(g, s), out) in jobs.iter().zip(&outcomes) {
        confusions[g].add(test[s].label(), out.class);
    }
    let mut traces = Vec::new();
    if keep_traces {
        // reuse complete-length runs, or classify the full tracks directly
        let complete = grid.iter().position(|&l| l == GridLength::Complete);
        let full: Vec<_> = match complete {
            Some(g) => jobs
                .iter()
                .zip(&outcomes)
                .filter(|((jg, _), _)| *jg == g)
                .map(|(_, o)| o.clone())
                .collect(),
            None => test.par_iter().map(|s| classifier.classify(s)).collect::<Result<_>>()?,
        };
        for (seq, out) in test.iter().zip(full) {
            traces.push(SequenceTrace {
                seq_id: seq.id().to_string(),
                label: seq.label(),
                predicted: out.class,
                frames: seq.samples().iter().map(|s| s.frame).collect(),
                probs: out.trace.row_iter().map(|r| r.iter().copied().collect()).collect(),
            });
        }
    }
    Ok(ModelReport {
        model: classifier.name().to_string(),
        results: grid
            .iter()
            .zip(confusions)
            .map(|(&l, cm)| LengthResult::from_confusion(l, cm))
            .collect(),
        traces,
    })
}

/// Summary of the curve shapes reported for the original benchmark.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonFlags {
    /// The SLDS curve peaks at length 10 (ties count).
    pub slds_best_at_10: Option<bool>,
    /// The RNN accuracy at length 100 is within 0.05 of its best.
    pub rnn_saturating_by_100: Option<bool>,
}

/// Tolerance for [`ComparisonFlags::rnn_saturating_by_100`].
pub const SATURATION_GAP: f64 = 0.05;

impl ComparisonFlags {
    /// Uses the first report whose name starts with `slds` / `rnn`.
    pub fn from_models(models: &[ModelReport]) -> Self {
        let find = |prefix: &str| models.iter().find(|m| m.model.starts_with(prefix));
        let slds_best_at_10 = find("slds").and_then(|m| {
            let at = m.accuracy_at(GridLength::Samples(10))?;
            Some(at >= m.best_accuracy()? - 1e-12)
        });
        let rnn_saturating_by_100 = find("rnn").and_then(|m| {
            let at = m.accuracy_at(GridLength::Samples(100))?;
            Some(at >= m.best_accuracy()? - SATURATION_GAP)
        });
        Self { slds_best_at_10, rnn_saturating_by_100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub class_names: Vec<String>,
    pub grid: Vec<GridLength>,
    pub policy: TruncationPolicy,
    pub models: Vec<ModelReport>,
    pub flags: ComparisonFlags,
}

impl EvalReport {
    pub fn new(
        class_names: Vec<String>,
        grid: Vec<GridLength>,
        policy: TruncationPolicy,
        models: Vec<ModelReport>,
    ) -> Result<Self> {
        validate_grid(&grid)?;
        for (i, m) in models.iter().enumerate() {
            if models[..i].iter().any(|o| o.model == m.model) {
                return Err(Error::InvalidParameter(format!("duplicate model name {:?}", m.model)));
            }
            if m.results.len() != grid.len() {
                return Err(Error::DimensionMismatch {
                    context: "results per grid length",
                    expected: grid.len(),
                    found: m.results.len(),
                });
            }
        }
        let flags = ComparisonFlags::from_models(&models);
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            class_names,
            grid,
            policy,
            models,
            flags,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!("unsupported report schema {}", r.schema_version)));
        }
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Plain-text accuracy table, one row per length and one column per model.
    pub fn accuracy_table(&self) -> String {
        let mut out = String::from("length");
        for m in &self.models {
            let _ = write!(out, "\t{}", m.model);
        }
        out.push('\n');
        for (g, l) in self.grid.iter().enumerate() {
            let _ = write!(out, "{l}");
            for m in &self.models {
                match m.results[g].accuracy {
                    Some(a) => {
                        let _ = write!(out, "\t{a:.4}");
                    }
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes the CSV views and `report.json` into `dir`.
pub fn emit_report(r: &EvalReport, dir: &Path) -> Result<()> {
    validate_grid(&r.grid)?;
    fs::create_dir_all(dir)?;
    let mut acc = String::from("length,model,accuracy\n");
    let mut prec = String::from("length,model,class,value\n");
    let mut rec = prec.clone();
    for (g, l) in r.grid.iter().enumerate() {
        for m in &r.models {
            let res = &m.results[g];
            let _ = writeln!(acc, "{l},{},{}", m.model, cell(res.accuracy));
            for (out, vals, mac) in [
                (&mut prec, &res.precision, res.macro_precision),
                (&mut rec, &res.recall, res.macro_recall),
            ] {
                for (k, v) in vals.iter().enumerate() {
                    let _ = writeln!(out, "{l},{},{},{}", m.model, r.class_names[k], cell(*v));
                }
                let _ = writeln!(out, "{l},{},macro,{}", m.model, cell(mac));
            }
        }
    }
    fs::write(dir.join("accuracy.csv"), acc)?;
    fs::write(dir.join("precision.csv"), prec)?;
    fs::write(dir.join("recall.csv"), rec)?;
    for m in &r.models {
        for res in &m.results {
            let mut out = format!("true\\pred,{}\n", r.class_names.join(","));
            for (k, row) in res.confusion.counts.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(u64::to_string).collect();
                let _ = writeln!(out, "{},{}", r.class_names[k], cells.join(","));
            }
            let name = format!("confusion_{}_{}.csv", file_safe(&m.model), res.length);
            fs::write(dir.join(name), out)?;
        }
    }
    let mut ids: Vec<&str> = r.models.iter().flat_map(|m| m.traces.iter().map(|t| t.seq_id.as_str())).collect();
    ids.sort_unstable();
    ids.dedup();
    if !ids.is_empty() {
        fs::create_dir_all(dir.join("traces"))?;
    }
    for id in ids {
        let mut out = format!("model,t,frame,{}\n", r.class_names.join(","));
        for m in &r.models {
            for tr in m.traces.iter().filter(|t| t.seq_id == id) {
                write_trace_rows(&mut out, &m.model, tr);
            }
        }
        fs::write(dir.join("traces").join(format!("{}.csv", file_safe(id))), out)?;
    }
    fs::write(dir.join("report.json"), r.to_json()?)?;
    Ok(())
}

fn write_trace_rows(out: &mut String, model: &str, tr: &SequenceTrace) {
    for (t, (frame, row)) in tr.frames.iter().zip(&tr.probs).enumerate() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{model},{t},{frame},{}", cells.join(","));
    }
}

/// A single-model trace CSV in the same layout as `traces/<id>.csv`.
pub fn trace_csv(model: &str, class_names: &[String], tr: &SequenceTrace) -> String {
    let mut out = format!("model,t,frame,{}\n", class_names.join(","));
    write_trace_rows(&mut out, model, tr);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::Classification;
    use crate::dataset::Sample;
    use nalgebra::DMatrix;

    struct Fixed {
        name: String,
        class: Option<usize>,
    }

    impl SequenceClassifier for Fixed {
        fn name(&self) -> &str {
            &self.name
        }
        fn class_count(&self) -> usize {
            4
        }
        fn classify(&self, seq: &TrackSequence) -> Result<Classification> {
            let class = self.class.unwrap_or(seq.label());
            let mut trace = DMatrix::zeros(seq.len(), 4);
            trace.column_mut(class).fill(1.0);
            Ok(Classification { class, trace })
        }
    }

    fn balanced(per_class: usize, len: usize) -> Vec<TrackSequence> {
        (0..4 * per_class)
            .map(|i| {
                let samples = (0..len as i64).map(|f| Sample { frame: f, x: 0.0, z: 0.0 }).collect();
                TrackSequence::new(format!("s{i:02}"), i % 4, samples).unwrap()
            })
            .collect()
    }

    #[test]
    fn grid_expansion() {
        let g = parse_grid("10:10:complete", 200).unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], GridLength::Samples(10));
        assert_eq!(g[19], GridLength::Samples(200));
        assert_eq!(g[20], GridLength::Complete);
        assert_eq!(parse_grid("10:10:complete", 205).unwrap().len(), 21);
        assert_eq!(parse_grid("5:5:20", 0).unwrap().len(), 4);
        assert_eq!(parse_grid("complete", 9).unwrap(), [GridLength::Complete]);
        for bad in ["", "10:0:50", "0:10:50", "10:10", "a:b:c", "50:10:20"] {
            assert!(matches!(parse_grid(bad, 100), Err(Error::InvalidGrid(_))), "{bad}");
        }
    }

    #[test]
    fn truncation_examples() {
        let s = &balanced(1, 200)[0];
        assert_eq!(truncate(s, 10).samples(), &s.samples()[..10]);
        assert_eq!(truncate(s, 500), *s);
        assert_eq!(truncate(s, 1).len(), 1);
    }

    #[test]
    fn hand_computed_metrics() {
        let cm = ConfusionMatrix::from_counts(vec![vec![2, 2], vec![0, 4]]);
        let m = metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.precision, [Some(1.0), Some(4.0 / 6.0)]);
        assert_eq!(m.recall, [Some(0.5), Some(1.0)]);
        let never = ConfusionMatrix::from_counts(vec![vec![3, 0], vec![1, 0]]);
        assert_eq!(metrics(&never).unwrap().precision[1], None);
        assert!(matches!(metrics(&ConfusionMatrix::new(3)), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn normalisation_examples() {
        let diag = ConfusionMatrix::from_counts(vec![vec![8, 0], vec![0, 8]]);
        assert_eq!(normalized(&diag, Axis::Rows), [[Some(1.0), Some(0.0)], [Some(0.0), Some(1.0)]]);
        let zero_row = ConfusionMatrix::from_counts(vec![vec![0, 0], vec![1, 3]]);
        assert_eq!(normalized(&zero_row, Axis::Rows)[0], [None, None]);
        assert_eq!(normalized(&zero_row, Axis::Columns)[0], [Some(0.0), Some(0.0)]);
    }

    #[test]
    fn perfect_and_constant_classifiers() {
        let test = balanced(2, 30);
        let grid = parse_grid("10:10:complete", 30).unwrap();
        let perfect = Fixed { name: "p".into(), class: None };
        let r = evaluate(&perfect, &test, &grid, TruncationPolicy::Clamp, false).unwrap();
        assert!(r.results.iter().all(|l| l.accuracy == Some(1.0) && l.evaluated == 8));
        let zero = Fixed { name: "z".into(), class: Some(0) };
        let r = evaluate(&zero, &test, &grid, TruncationPolicy::Clamp, false).unwrap();
        let l = &r.results[0];
        assert_eq!(l.accuracy, Some(0.25));
        assert_eq!(l.recall, [Some(1.0), Some(0.0), Some(0.0), Some(0.0)]);
        assert_eq!(l.precision[0], Some(0.25));
        assert_eq!(l.precision[1], None);
    }

    #[test]
    fn skip_policy_drops_short_tracks() {
        let mut test = balanced(1, 30);
        test.extend(balanced(1, 12));
        let grid = parse_grid("10:10:30", 0).unwrap();
        let p = Fixed { name: "p".into(), class: None };
        let skip = evaluate(&p, &test, &grid, TruncationPolicy::Skip, false).unwrap();
        assert_eq!(skip.results.iter().map(|r| r.evaluated).collect::<Vec<_>>(), [8, 4, 4]);
        let clamp = evaluate(&p, &test, &grid, TruncationPolicy::Clamp, false).unwrap();
        assert!(clamp.results.iter().all(|r| r.evaluated == 8));
    }

    #[test]
    fn empty_grid_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let r = EvalReport {
            schema_version: SCHEMA_VERSION,
            class_names: vec![],
            grid: vec![],
            policy: TruncationPolicy::Clamp,
            models: vec![],
            flags: ComparisonFlags::default(),
        };
        let out = dir.path().join("out");
        assert!(matches!(emit_report(&r, &out), Err(Error::InvalidGrid(_))));
        assert!(!out.exists());
    }

    #[test]
    fn report_files_and_json_round_trip() {
        let test = balanced(2, 25);
        let grid = parse_grid("10:10:complete", 25).unwrap();
        let models = vec![
            evaluate(&Fixed { name: "slds".into(), class: None }, &test, &grid, TruncationPolicy::Clamp, true).unwrap(),
            evaluate(&Fixed { name: "rnn".into(), class: Some(1) }, &test, &grid, TruncationPolicy::Clamp, true).unwrap(),
        ];
        let names = crate::dataset::default_class_names();
        let r = EvalReport::new(names, grid.clone(), TruncationPolicy::Clamp, models).unwrap();
        assert_eq!(r.flags.slds_best_at_10, Some(true));
        assert_eq!(r.flags.rnn_saturating_by_100, None);
        let dir = tempfile::tempdir().unwrap();
        emit_report(&r, dir.path()).unwrap();
        let acc = fs::read_to_string(dir.path().join("accuracy.csv")).unwrap();
        assert_eq!(acc.lines().count(), 1 + grid.len() * 2);
        assert!(acc.contains("complete,rnn,0.25\n"));
        assert!(dir.path().join("confusion_slds_complete.csv").exists());
        let tr = fs::read_to_string(dir.path().join("traces/s00.csv")).unwrap();
        assert_eq!(tr.lines().count(), 1 + 2 * 25);
        let back = EvalReport::load(dir.path().join("report.json")).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn duplicate_model_names_rejected() {
        let test = balanced(1, 10);
        let grid = vec![GridLength::Complete];
        let m = evaluate(&Fixed { name: "a".into(), class: None }, &test, &grid, TruncationPolicy::Clamp, false).unwrap();
        assert!(EvalReport::new(vec![], grid, TruncationPolicy::Clamp, vec![m.clone(), m]).is_err());
    }
}
