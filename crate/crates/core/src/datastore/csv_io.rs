//! CSV telemetry export.
//!
//! Header `timestamp,variable,value,stream`, LF line endings, every row
//! (including the last) terminated, `.` decimal separator, rows sorted by
//! `(timestamp, variable, stream)`. Missing values are empty fields.

use std::str::FromStr;

use crate::variable::Variable;

use super::points::{DataPoint, Stream};

pub const CSV_HEADER: &str = "timestamp,variable,value,stream";

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {detail}")]
    Row { line: u64, detail: String },
    #[error("unexpected header, expected `{CSV_HEADER}`")]
    Header,
}

/// Writes points in canonical order.
pub fn write_csv(points: &[DataPoint]) -> Vec<u8> {
    let mut sorted: Vec<&DataPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for p in sorted {
        let value = p.value.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([p.timestamp.to_string().as_str(), p.variable.name(), value.as_str(), p.stream.name()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Reads a CSV export back into points tagged with `run_id`.
pub fn parse_csv(bytes: &[u8], run_id: &str) -> Result<Vec<DataPoint>, CsvError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    if r.headers()?.iter().collect::<Vec<_>>() != CSV_HEADER.split(',').collect::<Vec<_>>() {
        return Err(CsvError::Header);
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |detail: String| CsvError::Row { line, detail };
        if rec.len() != 4 {
            return Err(bad(format!("{} fields", rec.len())));
        }
        let timestamp = rec[0].parse().map_err(|e| bad(format!("timestamp: {e}")))?;
        let variable = Variable::from_str(&rec[1]).map_err(|e| bad(e.to_string()))?;
        let value = match &rec[2] {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|e| bad(format!("value: {e}")))?),
        };
        let stream = Stream::from_str(&rec[3]).map_err(bad)?;
        out.push(DataPoint { timestamp, variable, value, stream, run_id: run_id.to_string() });
    }
    Ok(out)
}
