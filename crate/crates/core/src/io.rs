//! File helpers shared by the library and the command line.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::vinemodel::SampleMatrix;

/// 17 significant digits, enough to round-trip any double.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Writes a headerless CSV with one observation per line.
pub fn write_matrix_csv(path: &Path, m: &SampleMatrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| fmt_f64(m.get(i, j)))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV. A first line that does not parse as numbers is
/// taken as a header and skipped.
pub fn read_matrix_csv(path: &Path) -> Result<SampleMatrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", line + 1))),
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    SampleMatrix::from_rows(&rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// CSV text from a header and rows of already formatted fields.
pub fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}
