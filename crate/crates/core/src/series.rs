//! Time series files (`t,value`, `t = 1..n`) for prices, demand and signals.

use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Row {
    t: usize,
    value: f64,
}

pub fn load_series(path: &Path, n: usize) -> Result<Vec<f64>> {
    parse_series(&std::fs::read_to_string(path)?, n)
}

/// Parses a series; every step `1..=n` must appear exactly once.
pub fn parse_series(text: &str, n: usize) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = vec![None; n];
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("series row {}: {e}", i + 1)))?;
        if row.t == 0 || row.t > n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: row.t,
            });
        }
        if values[row.t - 1].replace(row.value).is_some() {
            return Err(Error::Parse(format!("series step {} given twice", row.t)));
        }
    }
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| Error::Parse(format!("series step {} missing", i + 1))))
        .collect()
}

pub fn write_series<W: Write>(values: &[f64], mut out: W) -> Result<()> {
    writeln!(out, "t,value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, v)?;
    }
    Ok(())
}
