//! File formats: datasets as CSV with header `y,x1,...,xp`, realized uniforms as a one-column
//! CSV with header `u`, numeric matrices as CSV rows, and results as pretty JSON.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use repro_core::Dataset;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

fn open(path: &Path) -> CliResult<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

fn parse_number(field: &str, path: &Path, line: usize) -> CliResult<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| CliError::input(format!("{}:{line}: '{field}' is not a number", path.display())))?;
    if !v.is_finite() {
        return Err(CliError::input(format!("{}:{line}: non-finite value '{field}'", path.display())));
    }
    Ok(v)
}

fn records(path: &Path) -> CliResult<Vec<csv::StringRecord>> {
    open(path)?
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Reads a dataset whose header is exactly `y,x1,...,xp`.
pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let recs = records(path)?;
    let header = recs.first().ok_or_else(|| CliError::input(format!("{}: empty file", path.display())))?;
    let p = header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("y".to_string()).chain((1..=p).map(|k| format!("x{k}"))).collect();
    if p == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(CliError::input(format!("{}: header must be y,x1,...,xp", path.display())));
    }
    let n = recs.len() - 1;
    let mut x = DMatrix::zeros(n, p);
    let mut y = Vec::with_capacity(n);
    for (i, rec) in recs[1..].iter().enumerate() {
        let line = i + 2;
        if rec.len() != p + 1 {
            return Err(CliError::input(format!("{}:{line}: expected {} fields, found {}", path.display(), p + 1, rec.len())));
        }
        y.push(parse_number(&rec[0], path, line)?);
        for k in 0..p {
            x[(i, k)] = parse_number(&rec[k + 1], path, line)?;
        }
    }
    Dataset::new(x, y).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn dataset_csv(data: &Dataset) -> String {
    let mut out = String::from("y");
    for k in 1..=data.p() {
        out.push_str(&format!(",x{k}"));
    }
    out.push('\n');
    for i in 0..data.n() {
        out.push_str(&format!("{}", data.y()[i]));
        for k in 0..data.p() {
            out.push_str(&format!(",{}", data.x()[(i, k)]));
        }
        out.push('\n');
    }
    out
}

pub fn uniforms_csv(u: &[f64]) -> String {
    let mut out = String::from("u\n");
    for v in u {
        out.push_str(&format!("{v}\n"));
    }
    out
}

/// Reads the realized-uniform side file written next to a simulated dataset.
pub fn read_uniforms(path: &Path) -> CliResult<Vec<f64>> {
    let recs = records(path)?;
    if recs.first().is_none_or(|h| h.len() != 1 || &h[0] != "u") {
        return Err(CliError::input(format!("{}: header must be u", path.display())));
    }
    recs[1..].iter().enumerate().map(|(i, r)| parse_number(&r[0], path, i + 2)).collect()
}

/// Reads a numeric matrix with `cols` columns. A non-numeric first row is taken as a header.
pub fn read_matrix(path: &Path, cols: usize) -> CliResult<DMatrix<f64>> {
    let recs = records(path)?;
    let skip = usize::from(recs.first().is_some_and(|r| r.iter().any(|f| f.parse::<f64>().is_err())));
    let rows = &recs[skip..];
    if rows.is_empty() {
        return Err(CliError::input(format!("{}: no matrix rows", path.display())));
    }
    let mut m = DMatrix::zeros(rows.len(), cols);
    for (i, rec) in rows.iter().enumerate() {
        let line = i + 1 + skip;
        if rec.len() != cols {
            return Err(CliError::input(format!("{}:{line}: expected {cols} columns, found {}", path.display(), rec.len())));
        }
        for (k, f) in rec.iter().enumerate() {
            m[(i, k)] = parse_number(f, path, line)?;
        }
    }
    Ok(m)
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(format!("cannot encode JSON: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Encodes `value` and checks that the text decodes back to the same value.
pub fn to_checked_json<T: Serialize + DeserializeOwned + PartialEq>(value: &T) -> CliResult<String> {
    let text = to_json(value)?;
    let back: T = serde_json::from_str(&text).map_err(|e| CliError::Numeric(format!("JSON output fails to decode: {e}")))?;
    if &back != value {
        return Err(CliError::Numeric("JSON output does not round-trip".into()));
    }
    Ok(text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Writes `text` to `path`, or to standard output when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::input(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|()| out.flush()).map_err(|e| CliError::input(format!("cannot write output: {e}")))
        }
    }
}
