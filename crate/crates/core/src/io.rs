//! Plain-text model and dataset files.
//!
//! Every number is written as `{:.16e}` (17 significant digits), which
//! round-trips any finite `f64` exactly.
//!
//! ```text
//! geogress-dataset v1 d=<d> T=<T>
//! t=<t_1>
//! <column 1 of X_1: d values>
//! ...
//! ```
//!
//! ```text
//! geogress-model v1 d=<d> k=<k>
//! <d rows of H>
//!
//! <d rows of Y>
//!
//! <θ_1 … θ_k>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::manifold::GeodesicModel;

const DATASET_MAGIC: &str = "geogress-dataset v1";
const MODEL_MAGIC: &str = "geogress-model v1";

fn fmt_num(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("writing to a String");
}

fn push_row<'a>(out: &mut String, values: impl IntoIterator<Item = &'a f64>) {
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        fmt_num(out, *v);
    }
    out.push('\n');
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Text form of a model.
pub fn model_to_string(model: &GeodesicModel) -> String {
    let mut out = format!("{MODEL_MAGIC} d={} k={}\n", model.dim(), model.rank());
    for m in [model.h(), model.y()] {
        for row in m.row_iter() {
            push_row(&mut out, row.iter());
        }
        out.push('\n');
    }
    push_row(&mut out, model.theta().iter());
    out
}

/// Text form of a dataset. Each sample is followed by its columns, one per line.
pub fn dataset_to_string(dataset: &Dataset) -> String {
    let mut out = format!("{DATASET_MAGIC} d={} T={}\n", dataset.dim(), dataset.len());
    for s in dataset {
        out.push_str("t=");
        fmt_num(&mut out, s.t);
        out.push('\n');
        for col in s.x.column_iter() {
            push_row(&mut out, col.iter());
        }
    }
    out
}

pub fn save_model(path: impl AsRef<Path>, model: &GeodesicModel) -> Result<()> {
    write_text(path.as_ref(), &model_to_string(model))
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    write_text(path.as_ref(), &dataset_to_string(dataset))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GeodesicModel> {
    let path = path.as_ref();
    parse_model(&read_text(path)?, path)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_dataset(&read_text(path)?, path)
}

struct Lines<'a> {
    path: PathBuf,
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
            inner: text.lines().enumerate().peekable(),
        }
    }

    fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::MalformedFile {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, l)) => Ok((i + 1, l.trim_end_matches('\r'))),
            None => Err(self.malformed(format!("unexpected end of file, expected {what}"))),
        }
    }

    fn numbers(&mut self, what: &str) -> Result<(usize, Vec<f64>)> {
        let (line_no, line) = self.next(what)?;
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| self.malformed(format!("line {line_no}: bad number {tok:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((line_no, values))
    }

    fn blank(&mut self) -> Result<()> {
        let (line_no, line) = self.next("blank separator")?;
        if !line.trim().is_empty() {
            return Err(self.malformed(format!("line {line_no}: expected a blank line")));
        }
        Ok(())
    }
}

/// Parses `<magic> a=<n> b=<m>`.
fn parse_header(lines: &mut Lines, magic: &str, keys: [&str; 2]) -> Result<[usize; 2]> {
    let (_, line) = lines.next("header")?;
    let rest = line
        .strip_prefix(magic)
        .ok_or_else(|| lines.malformed(format!("header must start with {magic:?}")))?;
    let fields: Vec<&str> = rest.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(lines.malformed(format!("header needs {}= and {}=", keys[0], keys[1])));
    }
    let mut out = [0; 2];
    for (slot, (field, key)) in out.iter_mut().zip(fields.iter().zip(keys)) {
        *slot = field
            .strip_prefix(key)
            .and_then(|v| v.strip_prefix('='))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| lines.malformed(format!("bad header field {field:?}")))?;
    }
    Ok(out)
}

fn parse_block(lines: &mut Lines, rows: usize, cols: usize, name: &str) -> Result<DMatrix<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (line_no, row) = lines.numbers(name)?;
        if row.len() != cols {
            return Err(lines.malformed(format!(
                "line {line_no}: {name} row has {} values, expected {cols}",
                row.len()
            )));
        }
        data.extend(row);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn parse_model(text: &str, path: &Path) -> Result<GeodesicModel> {
    let mut lines = Lines::new(text, path);
    let [d, k] = parse_header(&mut lines, MODEL_MAGIC, ["d", "k"])?;
    if d == 0 || k == 0 {
        return Err(lines.malformed("d and k must be positive"));
    }
    let h = parse_block(&mut lines, d, k, "H")?;
    lines.blank()?;
    let y = parse_block(&mut lines, d, k, "Y")?;
    lines.blank()?;
    let (line_no, theta) = lines.numbers("theta")?;
    if theta.len() != k {
        return Err(lines.malformed(format!(
            "line {line_no}: theta has {} values, expected {k}",
            theta.len()
        )));
    }
    if let Some((i, _)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(lines.malformed(format!("line {}: trailing content", i + 1)));
    }
    GeodesicModel::new(h, y, DVector::from_vec(theta))
}

fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let mut lines = Lines::new(text, path);
    let [d, n] = parse_header(&mut lines, DATASET_MAGIC, ["d", "T"])?;
    if d == 0 || n == 0 {
        return Err(lines.malformed("d and T must be positive"));
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let (line_no, line) = lines.next("a t= line")?;
        let t: f64 = line
            .trim()
            .strip_prefix("t=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| lines.malformed(format!("line {line_no}: expected t=<time>")))?;
        if !(0.0..=1.0).contains(&t) {
            return Err(lines.malformed(format!("line {line_no}: t={t} outside [0, 1]")));
        }
        let mut columns: Vec<f64> = Vec::new();
        let mut ell = 0;
        while let Some((_, peek)) = lines.inner.peek() {
            let peek = peek.trim();
            if peek.starts_with("t=") {
                break;
            }
            if peek.is_empty() {
                lines.inner.next();
                continue;
            }
            let (line_no, col) = lines.numbers("column")?;
            if col.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "{}: line {line_no} of sample {i} has {} values, header says d={d}",
                    path.display(),
                    col.len()
                )));
            }
            columns.extend(col);
            ell += 1;
        }
        if ell == 0 {
            return Err(lines.malformed(format!("sample {i} has no columns")));
        }
        samples.push(Sample::new(t, DMatrix::from_vec(d, ell, columns)));
    }
    if let Some((i, _)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(lines.malformed(format!("line {}: more samples than T={n}", i + 1)));
    }
    Dataset::new(samples)
}
