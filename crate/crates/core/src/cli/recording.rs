//! Recording CSV: header `t,pdc,e1,...,e24`, one sample per row.

use std::io::{BufRead, Write};

use crate::geometry::TAXEL_COUNT;
use crate::smoothing::{SmoothingError, TaxelRecording};

use super::CliError;

pub fn header() -> String {
    let mut h = String::from("t,pdc");
    for i in 1..=TAXEL_COUNT {
        h.push_str(&format!(",e{i}"));
    }
    h
}

fn row_error(line: usize, reason: impl Into<String>) -> CliError {
    CliError::Data(format!("row {line}: {}", reason.into()))
}

pub fn read_recording<R: BufRead>(input: R) -> Result<TaxelRecording, CliError> {
    let expected = header();
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, line)) => {
            let line = line?;
            if line.trim() != expected {
                return Err(row_error(1, format!("header must be exactly '{expected}'")));
            }
        }
        None => return Err(CliError::Data("empty recording file".into())),
    }
    let mut timestamps = Vec::new();
    let mut impedances = Vec::new();
    let mut pressure = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != TAXEL_COUNT + 2 {
            return Err(row_error(n, format!("expected {} columns, found {}", TAXEL_COUNT + 2, fields.len())));
        }
        let mut values = [0.0; TAXEL_COUNT + 2];
        for (k, (slot, text)) in values.iter_mut().zip(&fields).enumerate() {
            *slot = text
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| row_error(n, format!("column {} ('{text}') is not a finite number", k + 1)))?;
        }
        if let Some(&prev) = timestamps.last() {
            if values[0] <= prev {
                return Err(row_error(n, format!("time {} does not increase (previous {prev})", values[0])));
            }
        }
        timestamps.push(values[0]);
        pressure.push(values[1]);
        let mut row = [0.0; TAXEL_COUNT];
        row.copy_from_slice(&values[2..]);
        impedances.push(row);
    }
    if timestamps.is_empty() {
        return Err(CliError::Data("recording has no samples".into()));
    }
    TaxelRecording::new(timestamps, impedances, pressure).map_err(|e| match e {
        SmoothingError::NonMonotonic { row, .. } => row_error(row + 2, e.to_string()),
        other => CliError::Data(other.to_string()),
    })
}

/// Writes with shortest round-trip formatting, so reading back gives the
/// same numbers.
pub fn write_recording<W: Write>(rec: &TaxelRecording, mut out: W) -> Result<(), CliError> {
    writeln!(out, "{}", header())?;
    let mut line = String::new();
    for k in 0..rec.len() {
        line.clear();
        line.push_str(&format!("{},{}", rec.timestamps()[k], rec.pressure()[k]));
        for v in &rec.impedances()[k] {
            line.push_str(&format!(",{v}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
