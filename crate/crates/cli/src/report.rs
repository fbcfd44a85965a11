//! Run reports and deterministic numeric output.
//!
//! Every float written to a CSV or report goes through [`fmt_f64`], which
//! prints 17 significant digits so values round-trip exactly and repeated
//! runs are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

/// 17 significant digits: one leading digit plus 16 after the point.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One verified identity with its measured residual.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// Residual-style check: passes when `residual ≤ tolerance`.
    pub fn residual(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }

    /// Bound-style check with an explicit outcome and a margin recorded in
    /// the residual slot.
    pub fn bound(name: impl Into<String>, margin: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            residual: margin,
            tolerance: 0.0,
            pass,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub field: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub checks: Vec<Check>,
    pub diagnostics: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
    pub pass: bool,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn write_json(&self, path: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text)
    }
}

/// Minimal CSV writer with deterministic float cells.
pub struct CsvWriter {
    rows: Vec<String>,
}

impl CsvWriter {
    pub fn new(header: &str) -> Self {
        Self {
            rows: vec![header.to_string()],
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.rows.push(cells.join(","));
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut text = self.rows.join("\n");
        text.push('\n');
        fs::write(path, text)
    }
}
