//! Reproducibility block and table formatting.

use std::fs;
use std::path::Path;

use serde::Serialize;

use gi_core::checkpoint::config_hash_hex;
use gi_core::{Error, Result};

/// Deterministic hex build id derived from the package identity, so
/// identical builds stamp identical outputs.
pub fn build_id() -> String {
    let full = config_hash_hex(concat!(env!("CARGO_PKG_NAME"), "@", env!("CARGO_PKG_VERSION")));
    full[..12].to_string()
}

#[derive(Serialize)]
struct RunInfo<'a> {
    config_hash: &'a str,
    seed: u64,
    build_id: String,
}

/// The reproducibility block as a JSON string.
pub fn run_info_json(config_json: &str, seed: u64) -> String {
    let hash = config_hash_hex(config_json);
    let info = RunInfo {
        config_hash: &hash,
        seed,
        build_id: build_id(),
    };
    serde_json::to_string_pretty(&info).expect("run info serializes") + "\n"
}

/// Write `run_info.json` into an output directory.
pub fn write_run_info(dir: &Path, config_json: &str, seed: u64) -> Result<()> {
    let path = dir.join("run_info.json");
    fs::write(&path, run_info_json(config_json, seed))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Fixed-width table: one header row plus data rows.
pub fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if cell.len() > widths[i] {
                widths[i] = cell.len();
            }
        }
    }
    let mut out = String::new();
    let fmt_row = |cells: Vec<String>, widths: &[usize]| -> String {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{cell:>width$}", width = widths[i]));
        }
        line.push('\n');
        line
    };
    out.push_str(&fmt_row(
        headers.iter().map(|s| s.to_string()).collect(),
        &widths,
    ));
    for row in rows {
        out.push_str(&fmt_row(row.clone(), &widths));
    }
    out
}
