//! Long-format plot data derived from a trajectory table.
//!
//! Turns a wide `t, <series...>` CSV into `t, series, value` rows — one row
//! per input row per series — and, when the model ships a closed form,
//! appends oracle series (`alpha0_oracle`, `mean_gamma_oracle`, ...)
//! evaluated at the same times so plots can overlay solver output and
//! ground truth without further processing.

use mmfg::model::AnalyticOracle;
use mmfg::{Error, Result};

/// The header of every emitted plot-data file.
pub const PLOT_HEADER: &str = "t, series, value";

fn sig(v: f64) -> String {
    format!("{v:.16e}")
}

/// Converts a wide trajectory CSV into long-format plot data.
///
/// The input must have a header whose first column is `t`; every data row
/// must have one numeric field per header column. Malformed input is
/// rejected with the offending 1-based line number. An input that is empty
/// after its header yields an output that is empty after its header.
pub fn emit_plot_data(input: &str, oracle: Option<&AnalyticOracle>) -> Result<String> {
    let mut lines = input.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::InvalidConfig(
            "plot input line 1: missing header row".into(),
        ));
    };
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.first() != Some(&"t") {
        return Err(Error::InvalidConfig(format!(
            "plot input line 1: first column must be 't', got '{}'",
            columns.first().unwrap_or(&"")
        )));
    }
    if columns.len() < 2 {
        return Err(Error::InvalidConfig(
            "plot input line 1: expected at least one series column besides 't'".into(),
        ));
    }

    // Oracle series, in column order, for columns the closed form covers.
    let oracle_series: Vec<(String, &dyn Fn(f64) -> f64)> = match oracle {
        None => Vec::new(),
        Some(o) => {
            let mut series: Vec<(String, &dyn Fn(f64) -> f64)> = Vec::new();
            for &col in &columns[1..] {
                let f: Option<&dyn Fn(f64) -> f64> = match col {
                    "alpha0" => Some(&*o.alpha0),
                    "mean_gamma" => Some(&*o.mean_gamma),
                    "mean_x" => o.mean_x.as_deref().map(|f| f as &dyn Fn(f64) -> f64),
                    "mean_Pgrave" => {
                        o.mean_pgrave.as_deref().map(|f| f as &dyn Fn(f64) -> f64)
                    }
                    _ => None,
                };
                if let Some(f) = f {
                    series.push((format!("{col}_oracle"), f));
                }
            }
            series
        }
    };

    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for (idx, raw) in lines {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            return Err(Error::InvalidConfig(format!(
                "plot input line {line_no}: blank row"
            )));
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(Error::InvalidConfig(format!(
                "plot input line {line_no}: expected {} fields, found {}",
                columns.len(),
                fields.len()
            )));
        }
        let mut values = Vec::with_capacity(fields.len());
        for (field, col) in fields.iter().zip(&columns) {
            let v: f64 = field.parse().map_err(|_| {
                Error::InvalidConfig(format!(
                    "plot input line {line_no}: cannot parse '{field}' in column '{col}'"
                ))
            })?;
            values.push(v);
        }
        let t = values[0];
        for (col, value) in columns[1..].iter().zip(&values[1..]) {
            out.push_str(&format!("{}, {col}, {}\n", sig(t), sig(*value)));
        }
        for (name, f) in &oracle_series {
            out.push_str(&format!("{}, {name}, {}\n", sig(t), sig(f(t))));
        }
    }
    Ok(out)
}
