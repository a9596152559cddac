//! Track CSV files and split manifests.
//!
//! A track file is UTF-8 CSV with an optional first-line label comment:
//!
//! ```text
//! # label=Crossing
//! frame,x,z
//! 0,1.25,14.5
//! 1,1.31,14.52
//! ```
//!
//! A manifest lists one path per line under `[train]` / `[test]` headers,
//! relative to the manifest's directory, optionally followed by
//! ` label=<Class>`:
//!
//! ```text
//! classes=BendingIn,Crossing,Starting,Stopping
//! [train]
//! train/train_000_BendingIn.csv
//! [test]
//! test/test_000_BendingIn.csv
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{default_class_names, Sample, TrackSequence};
use crate::error::{Error, Result};

const HEADER: &str = "frame,x,z";
const LABEL_PREFIX: &str = "# label=";

fn parse_err(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn sequence_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads a track using the default class names and the file's own label.
pub fn load_sequence(path: impl AsRef<Path>) -> Result<TrackSequence> {
    load_sequence_with(path.as_ref(), &default_class_names(), None)
}

/// Loads a track, resolving labels against `class_names`. A label from the
/// manifest and one from the file must agree.
pub fn load_sequence_with(path: &Path, class_names: &[String], manifest_label: Option<&str>) -> Result<TrackSequence> {
    let text = read_text(path)?;
    let mut file_label = None;
    let mut header_seen = false;
    let mut samples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(LABEL_PREFIX) {
            if header_seen || file_label.is_some() {
                return Err(parse_err(path, lineno, 1, "label comment must precede the header"));
            }
            file_label = Some(rest.trim().to_string());
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line.trim() != HEADER {
                return Err(parse_err(path, lineno, 1, format!("expected header {HEADER:?}")));
            }
            header_seen = true;
            continue;
        }
        let mut fields = Vec::with_capacity(3);
        let mut col = 1;
        for f in line.split(',') {
            fields.push((col, f));
            col += f.chars().count() + 1;
        }
        if fields.len() != 3 {
            return Err(parse_err(path, lineno, 1, format!("expected 3 fields, found {}", fields.len())));
        }
        let (c0, f0) = fields[0];
        let frame: i64 = f0
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, c0, format!("invalid frame {f0:?}")))?;
        let coord = |(c, f): (usize, &str)| -> Result<f64> {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(path, lineno, c, format!("invalid coordinate {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, lineno, c, "coordinate must be finite"));
            }
            Ok(v)
        };
        let x = coord(fields[1])?;
        let z = coord(fields[2])?;
        if let Some(prev) = samples.last().map(|s: &Sample| s.frame) {
            if frame <= prev {
                return Err(Error::NonMonotoneFrames {
                    path: path.to_path_buf(),
                    row: samples.len(),
                });
            }
        }
        samples.push(Sample { frame, x, z });
    }
    if !header_seen {
        return Err(parse_err(path, 1, 1, "missing header"));
    }
    if samples.len() < 2 {
        return Err(parse_err(path, text.lines().count().max(1), 1, "a track needs at least 2 samples"));
    }
    let label_name = match (file_label, manifest_label) {
        (Some(f), Some(m)) if f != m => {
            return Err(Error::ConflictingLabel {
                path: path.to_path_buf(),
                file: f,
                manifest: m.to_string(),
            })
        }
        (Some(f), _) => f,
        (None, Some(m)) => m.to_string(),
        (None, None) => return Err(Error::MissingLabel(path.to_path_buf())),
    };
    let label = class_names
        .iter()
        .position(|c| *c == label_name)
        .ok_or(Error::UnknownLabel(label_name))?;
    TrackSequence::new(sequence_id(path), label, samples)
}

/// Canonical serialisation: label comment, header, shortest round-trip floats.
pub fn format_sequence(seq: &TrackSequence, class_names: &[String]) -> String {
    let mut out = String::with_capacity(24 * (seq.len() + 2));
    let _ = writeln!(out, "{LABEL_PREFIX}{}", class_names[seq.label()]);
    let _ = writeln!(out, "{HEADER}");
    for s in seq.samples() {
        let _ = writeln!(out, "{},{},{}", s.frame, s.x, s.z);
    }
    out
}

pub fn write_sequence(seq: &TrackSequence, class_names: &[String], path: impl AsRef<Path>) -> Result<()> {
    if seq.label() >= class_names.len() {
        return Err(Error::InvalidLabel {
            label: seq.label(),
            classes: class_names.len(),
        });
    }
    fs::write(path, format_sequence(seq, class_names))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// As written in the manifest (relative to its directory).
    pub path: PathBuf,
    pub label: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn entries(&self, split: Split) -> &[ManifestEntry] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut class_names = None;
    let mut section: Option<Split> = None;
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut seen = HashSet::new();
    let mut last_line = 1;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        last_line = lineno;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("classes=") {
            if class_names.is_some() {
                return Err(parse_err(path, lineno, 1, "duplicate classes= key"));
            }
            let names: Vec<String> = rest.split(',').map(|s| s.trim().to_string()).collect();
            if names.iter().any(String::is_empty) {
                return Err(parse_err(path, lineno, 9, "empty class name"));
            }
            class_names = Some(names);
            continue;
        }
        match line {
            "[train]" => {
                section = Some(Split::Train);
                continue;
            }
            "[test]" => {
                section = Some(Split::Test);
                continue;
            }
            _ if line.starts_with('[') => {
                return Err(parse_err(path, lineno, 1, format!("unknown section {line}")));
            }
            _ => {}
        }
        let Some(split) = section else {
            return Err(parse_err(path, lineno, 1, "path listed before any [train]/[test] section"));
        };
        let (rel, label) = match line.split_once(" label=") {
            Some((p, l)) => (p.trim(), Some(l.trim().to_string())),
            None => (line, None),
        };
        let rel = PathBuf::from(rel);
        if !seen.insert(rel.clone()) {
            return Err(Error::DuplicatePath(rel));
        }
        let entry = ManifestEntry { path: rel, label };
        match split {
            Split::Train => train.push(entry),
            Split::Test => test.push(entry),
        }
    }
    let class_names = class_names.unwrap_or_else(default_class_names);
    if train.is_empty() {
        return Err(parse_err(path, last_line, 1, "train split empty"));
    }
    if test.is_empty() {
        return Err(parse_err(path, last_line, 1, "test split empty"));
    }
    let manifest = DatasetManifest { root, class_names, train, test };
    for e in manifest.train.iter().chain(&manifest.test) {
        let full = manifest.resolve(e);
        if !full.is_file() {
            return Err(Error::MissingFile(full));
        }
    }
    Ok(manifest)
}

pub fn format_manifest(m: &DatasetManifest) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "classes={}", m.class_names.join(","));
    for (name, entries) in [("train", &m.train), ("test", &m.test)] {
        let _ = writeln!(out, "[{name}]");
        for e in entries {
            match &e.label {
                Some(l) => {
                    let _ = writeln!(out, "{} label={l}", e.path.display());
                }
                None => {
                    let _ = writeln!(out, "{}", e.path.display());
                }
            }
        }
    }
    out
}

pub fn write_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_manifest(m))?;
    Ok(())
}

/// Loads every track of one split, in manifest order.
pub fn load_split(m: &DatasetManifest, split: Split) -> Result<Vec<TrackSequence>> {
    m.entries(split)
        .par_iter()
        .map(|e| load_sequence_with(&m.resolve(e), &m.class_names, e.label.as_deref()))
        .collect()
}
