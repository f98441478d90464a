//! Artifact files: dataset CSV and metadata, JSON documents, plot-ready CSV.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelSection;
use crate::error::CliError;

pub const DATASET: &str = "dataset.csv";
pub const DATASET_META: &str = "dataset.meta.json";
pub const NARMAX_PARAMS: &str = "narmax_params.json";
pub const NARMAX_FIT: &str = "narmax_fit.json";
pub const POLYAR_PARAMS: &str = "polyar_params.json";
pub const POLYAR_FIT: &str = "polyar_fit.json";
pub const SUMMARY_TABLE: &str = "summary_table.json";
pub const FORECAST_SUMMARY: &str = "forecast_summary.json";
pub const RESOLVED_CONFIG: &str = "config.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Twelve significant digits.
pub fn fmt(v: f64) -> String {
    format!("{v:.11e}")
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Provenance(format!("{}: {e}", path.display())))
}

/// CSV with a header row; every value at twelve significant digits.
pub fn csv_bytes<I>(header: &[String], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row.iter().map(|v| fmt(*v))).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    write_bytes(path, &csv_bytes(&header, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    /// SHA-256 of the dataset CSV bytes.
    pub content_hash: String,
    pub config_hash: String,
    /// Hash of the settings that determine the data.
    pub data_config_hash: String,
    pub seed: u64,
    pub model_seed: u64,
    pub delta: f64,
    pub rows: usize,
    pub model: ModelSection,
    pub created_unix: u64,
}

/// Dataset CSV: `t,x1,...,xK`.
pub fn dataset_bytes(delta: f64, x: &Array2<f64>) -> Vec<u8> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=x.ncols()).map(|k| format!("x{k}")));
    let rows = x.rows().into_iter().enumerate().map(|(n, row)| {
        let mut v = Vec::with_capacity(row.len() + 1);
        v.push(n as f64 * delta);
        v.extend(row.iter().copied());
        v
    });
    csv_bytes(&header, rows)
}

/// Reads the dataset and returns its observations and content hash.
pub fn read_dataset(path: &Path) -> Result<(Array2<f64>, String), CliError> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    let hash = sha256_hex(&bytes);
    let bad = |m: String| CliError::Provenance(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let k = header.len().saturating_sub(1);
    if k == 0 || &header[0] != "t" || (1..=k).any(|i| header[i] != format!("x{i}")) {
        return Err(bad("header must be t,x1,...,xK".into()));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for field in rec.iter().skip(1) {
            values.push(field.parse::<f64>().map_err(|e| bad(format!("row {}: {e}", rows + 1)))?);
        }
        rows += 1;
    }
    let x = Array2::from_shape_vec((rows, k), values).map_err(|e| bad(e.to_string()))?;
    Ok((x, hash))
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip_keeps_twelve_digits() {
        let x = Array2::from_shape_fn((5, 3), |(n, k)| (n as f64 + 1.0) * std::f64::consts::PI * 10f64.powi(k as i32 - 1));
        let bytes = dataset_bytes(0.05, &x);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,x3\n"));
        assert!(text.ends_with('\n'));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_bytes(&path, &bytes).unwrap();
        let (back, hash) = read_dataset(&path).unwrap();
        assert_eq!(hash, sha256_hex(&bytes));
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() <= 1e-11 * b.abs());
        }
    }

    #[test]
    fn value_format() {
        assert_eq!(fmt(1.0), "1.00000000000e0");
        assert_eq!(fmt(-2.5e-7), "-2.50000000000e-7");
    }
}
