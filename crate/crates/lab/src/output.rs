//! Report files: CSV tables, plot data and run manifests.
//!
//! Every command writes its main CSV to `--out` and its companions next to
//! it by appending a suffix (`.manifest.json`, `.plot.dat`, `.summary.csv`,
//! `.model.json`, `.report.csv`). Reals are written with 17 significant
//! digits so doubles round-trip exactly.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::LabError;

/// Scientific notation with 17 significant digits.
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn companion(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), LabError> {
    std::fs::write(path, bytes).map_err(|source| LabError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A CSV table held in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn write(&self, path: &Path) -> Result<(), LabError> {
        write_file(path, &self.to_bytes())
    }
}

/// Two-column numeric plot data with a commented header.
pub fn write_plot(path: &Path, x_name: &str, y_name: &str, points: &[(f64, f64)]) -> Result<(), LabError> {
    let mut s = format!("# {x_name} {y_name}\n");
    for (x, y) in points {
        s.push_str(&format!("{} {}\n", real(*x), real(*y)));
    }
    write_file(path, s.as_bytes())
}

/// What a run did, written next to its outputs. Holds no timestamps or
/// absolute paths, so identical invocations give identical manifests.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            outputs: Vec::new(),
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes `<out>.manifest.json`.
    pub fn write(&mut self, out: &Path) -> Result<(), LabError> {
        let path = companion(out, ".manifest.json");
        self.output(&path);
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        write_file(&path, s.as_bytes())
    }
}
