//! Machine-readable experiment reports: a stable-ordered table for CSV plus
//! a nested JSON document carrying the config echo and summary block.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// One table cell. Floats print with the shortest round-trip representation,
/// so payloads are byte-stable across runs and thread counts.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => format!("{v}"),
            // normalize negative zero so payloads stay tool-friendly
            Cell::Float(v) => format!("{}", if *v == 0.0 { 0.0 } else { *v }),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Fixed-column table, one row per grid point.
#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }
}

/// Structured record of one experiment. The wall time is the only field that
/// varies between reruns with identical config and seed; it is excluded from
/// the CSV payload.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub version: String,
    pub experiment: String,
    pub config: BTreeMap<String, String>,
    pub table: Table,
    pub summary: BTreeMap<String, f64>,
    pub wall_time_s: f64,
}

impl ExperimentReport {
    pub fn new(experiment: &str, config: BTreeMap<String, String>, table: Table) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: experiment.to_string(),
            config,
            table,
            summary: BTreeMap::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn with_summary(mut self, entries: impl IntoIterator<Item = (String, f64)>) -> Self {
        self.summary.extend(entries);
        self
    }

    /// CSV payload: header plus one line per row, UTF-8, comma separator,
    /// `.` decimal point. Deterministic for fixed `(config, seed)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.table.columns.join(","));
        out.push('\n');
        for row in &self.table.rows {
            let line: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("report serialization failed: {e}")))
    }
}
