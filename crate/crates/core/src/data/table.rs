use std::path::Path;

use nalgebra::DMatrix;

use super::write_atomic;
use crate::error::{Error, Result};

/// Renders a header row and one line per matrix row. Floats use the shortest
/// representation that parses back to the same bits.
pub fn csv_to_string(headers: &[&str], rows: &DMatrix<f64>) -> Result<String> {
    if headers.len() != rows.ncols() {
        return Err(Error::invalid(format!(
            "{} headers for {} columns",
            headers.len(),
            rows.ncols()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    w.write_record(headers).map_err(io)?;
    let mut record = Vec::with_capacity(rows.ncols());
    for r in 0..rows.nrows() {
        record.clear();
        record.extend(rows.row(r).iter().map(|v| format!("{v:?}")));
        w.write_record(&record).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv write failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn csv_export(path: impl AsRef<Path>, headers: &[&str], rows: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, csv_to_string(headers, rows)?.as_bytes())
}

/// Parses a header row and numeric records. Ragged rows and non-numeric
/// fields are reported with their 1-based line number.
pub fn csv_parse(text: &str) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(&e, 1))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Csv {
            line: 1,
            msg: "missing header row".into(),
        });
    }
    let mut values = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e, rows as u64 + 2))?;
        let line = record.position().map_or(rows as u64 + 2, |p| p.line());
        for field in record.iter() {
            let v = field.trim().parse::<f64>().map_err(|_| Error::Csv {
                line,
                msg: format!("field {field:?} is not a number"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok((headers.clone(), DMatrix::from_row_slice(rows, headers.len(), &values)))
}

fn csv_error(e: &csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    let msg = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("row has {len} fields, expected {expected_len}")
        }
        _ => e.to_string(),
    };
    Error::Csv { line, msg }
}

pub fn csv_import(path: impl AsRef<Path>) -> Result<(Vec<String>, DMatrix<f64>)> {
    csv_parse(&std::fs::read_to_string(path)?)
}
