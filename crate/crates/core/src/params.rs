//! Versioned plain-text parameter files.
//!
//! ```text
//! switchbench-params 1
//! meta kind slds
//! meta class_names BendingIn,Crossing,Starting,Stopping
//! tensor switch_trans 4 4
//! 9.7e-1 1e-2 1e-2 1e-2
//! ...
//! ```
//!
//! Line one is the magic and format version. `meta <key> <value>` lines carry
//! scalars and strings (the value is the rest of the line). `tensor <name>
//! <rows> <cols>` is followed by `rows` lines of `cols` space-separated
//! numbers in row-major order. Names nest with dots (`state.2.prior.cov`).
//! Numbers are written in shortest round-trip form, so read → write is
//! lossless. Blank lines and `#` comments are ignored on read.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::Gaussian;
use crate::lds::LdsParams;
use crate::slds::SldsParams;

pub const MAGIC: &str = "switchbench-params";
pub const VERSION: u32 = 1;

/// An ordered collection of metadata entries and named matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamDoc {
    meta: Vec<(String, String)>,
    tensors: Vec<(String, DMatrix<f64>)>,
}

fn valid_key(k: &str) -> bool {
    !k.is_empty() && !k.chars().any(char::is_whitespace)
}

impl ParamDoc {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces an existing entry with the same key.
    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        assert!(valid_key(key), "invalid meta key {key:?}");
        let value = value.to_string();
        assert!(!value.contains('\n'), "meta values are single-line");
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::InvalidParameter(format!("parameter file lacks meta key {key:?}")))
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::InvalidParameter(format!("meta {key}: cannot parse {raw:?}")))
    }

    pub fn push_tensor(&mut self, name: &str, m: &DMatrix<f64>) {
        assert!(valid_key(name), "invalid tensor name {name:?}");
        match self.tensors.iter_mut().find(|(k, _)| k == name) {
            Some(e) => e.1 = m.clone(),
            None => self.tensors.push((name.to_string(), m.clone())),
        }
    }

    pub fn push_vector(&mut self, name: &str, v: &DVector<f64>) {
        self.push_tensor(name, &DMatrix::from_column_slice(1, v.len(), v.as_slice()));
    }

    pub fn tensor(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.tensors
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::InvalidParameter(format!("parameter file lacks tensor {name:?}")))
    }

    /// A tensor stored as one row.
    pub fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let m = self.tensor(name)?;
        if m.nrows() != 1 {
            return Err(Error::DimensionMismatch { context: "stored vector rows", expected: 1, found: m.nrows() });
        }
        Ok(DVector::from_iterator(m.ncols(), m.iter().copied()))
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(k, _)| k.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, m) in &self.tensors {
            let _ = writeln!(out, "tensor {name} {} {}", m.nrows(), m.ncols());
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:e}", m[(r, c)])).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out
    }

    /// `path` only labels error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, column: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (n, header) = lines.next().ok_or_else(|| err(1, 1, "empty parameter file".into()))?;
        let mut head = header.split_whitespace();
        if head.next() != Some(MAGIC) {
            return Err(err(n, 1, format!("expected `{MAGIC} <version>`")));
        }
        match head.next().map(str::parse::<u32>) {
            Some(Ok(VERSION)) => {}
            Some(Ok(v)) => return Err(err(n, MAGIC.len() + 2, format!("unsupported version {v}"))),
            _ => return Err(err(n, MAGIC.len() + 2, "missing or malformed version".into())),
        }
        let mut doc = ParamDoc::new();
        while let Some((n, line)) = lines.next() {
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                if !valid_key(k) {
                    return Err(err(n, 6, "malformed meta key".into()));
                }
                doc.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let [name, rows, cols] = parts[..] else {
                    return Err(err(n, 8, "expected `tensor <name> <rows> <cols>`".into()));
                };
                let (Ok(rows), Ok(cols)) = (rows.parse::<usize>(), cols.parse::<usize>()) else {
                    return Err(err(n, 8, "malformed tensor shape".into()));
                };
                if doc.tensors.iter().any(|(k, _)| k == name) {
                    return Err(err(n, 8, format!("duplicate tensor {name}")));
                }
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let (rn, row) = lines
                        .next()
                        .ok_or_else(|| err(n, 1, format!("tensor {name}: expected {rows} rows, found {r}")))?;
                    let mut count = 0;
                    let mut col = 1;
                    for tok in row.split(' ') {
                        if tok.is_empty() {
                            col += 1;
                            continue;
                        }
                        let v: f64 = tok
                            .parse()
                            .map_err(|_| err(rn, col, format!("invalid number {tok:?}")))?;
                        data.push(v);
                        count += 1;
                        col += tok.len() + 1;
                    }
                    if count != cols {
                        return Err(err(rn, 1, format!("tensor {name}: expected {cols} values, found {count}")));
                    }
                }
                doc.tensors.push((name.to_string(), DMatrix::from_row_slice(rows, cols, &data)));
            } else {
                return Err(err(n, 1, "expected `meta` or `tensor`".into()));
            }
        }
        Ok(doc)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

pub fn put_gaussian(doc: &mut ParamDoc, prefix: &str, g: &Gaussian) {
    doc.push_vector(&format!("{prefix}.mean"), g.mean());
    doc.push_tensor(&format!("{prefix}.cov"), g.cov());
}

pub fn get_gaussian(doc: &ParamDoc, prefix: &str) -> Result<Gaussian> {
    Gaussian::new(doc.vector(&format!("{prefix}.mean"))?, doc.tensor(&format!("{prefix}.cov"))?.clone())
}

pub fn put_lds(doc: &mut ParamDoc, prefix: &str, p: &LdsParams) {
    doc.push_tensor(&format!("{prefix}.transition"), p.transition());
    doc.push_tensor(&format!("{prefix}.emission"), p.emission());
    doc.push_tensor(&format!("{prefix}.transition_noise"), p.transition_noise());
    doc.push_tensor(&format!("{prefix}.emission_noise"), p.emission_noise());
    put_gaussian(doc, &format!("{prefix}.prior"), p.prior());
}

pub fn get_lds(doc: &ParamDoc, prefix: &str) -> Result<LdsParams> {
    let t = |name: &str| doc.tensor(&format!("{prefix}.{name}")).cloned();
    LdsParams::new(
        t("transition")?,
        t("emission")?,
        t("transition_noise")?,
        t("emission_noise")?,
        get_gaussian(doc, &format!("{prefix}.prior"))?,
    )
}

/// Adds `kind`, `class_names`, `num_states` and the `slds.*` tensors.
pub fn put_slds(doc: &mut ParamDoc, p: &SldsParams) {
    doc.set_meta("kind", "slds");
    doc.set_meta("class_names", p.names().join(","));
    doc.set_meta("num_states", p.num_states());
    doc.push_tensor("slds.switch_trans", p.switch_trans());
    doc.push_vector("slds.switch_prior", p.switch_prior());
    for (k, st) in p.states().iter().enumerate() {
        put_lds(doc, &format!("slds.state.{k}"), st);
    }
}

pub fn get_slds(doc: &ParamDoc) -> Result<SldsParams> {
    let s: usize = doc.meta_parsed("num_states")?;
    let names = split_names(doc.meta("class_names")?);
    let states = (0..s)
        .map(|k| get_lds(doc, &format!("slds.state.{k}")))
        .collect::<Result<_>>()?;
    SldsParams::new(
        names,
        states,
        doc.tensor("slds.switch_trans")?.clone(),
        doc.vector("slds.switch_prior")?,
    )
}

pub fn split_names(raw: &str) -> Vec<String> {
    raw.split(',').map(str::to_string).collect()
}

pub fn write_slds(p: &SldsParams, path: impl AsRef<Path>) -> Result<()> {
    let mut doc = ParamDoc::new();
    put_slds(&mut doc, p);
    doc.write(path)
}

pub fn read_slds(path: impl AsRef<Path>) -> Result<SldsParams> {
    get_slds(&ParamDoc::read(path)?)
}

/// Path used in error messages for in-memory documents.
pub fn memory_path() -> PathBuf {
    PathBuf::from("<memory>")
}
