//! On-disk layout of a finished run.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::completion::{CompletionError, ContributionTensor};
use crate::engine::{RunRecord, SCHEMA_VERSION};
use crate::io::{csv_bytes, write_atomic};
use crate::model::{ModelError, ModelParams};

pub const CONFIG_FILE: &str = "config.json";
pub const RECORD_FILE: &str = "record.json";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const TENSOR_FILE: &str = "tensor.bin";
pub const TENSOR_CSV_FILE: &str = "tensor.csv";
pub const COMPLETED_FILE: &str = "completed.bin";
pub const CONTRIBUTIONS_CSV_FILE: &str = "contributions.csv";
pub const CONTRIBUTIONS_JSON_FILE: &str = "contributions.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MODEL_FILE: &str = "model.bin";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}: schema version {1}, expected {SCHEMA_VERSION}")]
    Version(String, u64),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}: {source}")]
    Tensor { path: String, source: CompletionError },
    #[error("{path}: {source}")]
    Model { path: String, source: ModelError },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
    let path = dir.join(name);
    write_atomic(&path, bytes).map_err(|source| StoreError::Io { path: path.display().to_string(), source })
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>, StoreError> {
    let path = dir.join(name);
    fs::read(&path).map_err(|source| StoreError::Io { path: path.display().to_string(), source })
}

/// `round,client,alpha,selected` for every client in every round.
pub fn rounds_csv(record: &RunRecord) -> Result<Vec<u8>, csv::Error> {
    let n = record.clients.len();
    let rows = record.rounds.iter().flat_map(|r| {
        (0..n).map(move |k| {
            let pos = r.selected.iter().position(|&s| s == k);
            let alpha = pos.map_or(0.0, |i| r.weights[i]);
            [r.round.to_string(), k.to_string(), alpha.to_string(), u8::from(pos.is_some()).to_string()]
        })
    });
    csv_bytes(&["round", "client", "alpha", "selected"], rows)
}

/// `round,accuracy,macro_f1` per round.
pub fn metrics_csv(record: &RunRecord) -> Result<Vec<u8>, csv::Error> {
    csv_bytes(
        &["round", "accuracy", "macro_f1"],
        record
            .rounds
            .iter()
            .map(|r| [r.round.to_string(), r.metrics.accuracy.to_string(), r.metrics.macro_f1.to_string()]),
    )
}

/// Writes every run file into `dir`, creating it if needed. Each file is
/// replaced atomically.
pub fn persist_run(record: &RunRecord, dir: impl AsRef<Path>) -> Result<(), StoreError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| StoreError::Io { path: dir.display().to_string(), source })?;
    write(dir, CONFIG_FILE, json(&record.config).as_bytes())?;
    write(dir, RECORD_FILE, json(record).as_bytes())?;
    write(dir, ROUNDS_FILE, &rounds_csv(record)?)?;
    write(dir, METRICS_FILE, &metrics_csv(record)?)?;
    write(dir, TENSOR_FILE, &record.tensor.to_bytes())?;
    let tensor_csv = record.tensor.to_csv().map_err(|source| StoreError::Tensor { path: TENSOR_CSV_FILE.into(), source })?;
    write(dir, TENSOR_CSV_FILE, &tensor_csv)?;
    write(dir, COMPLETED_FILE, &record.completed.to_bytes())?;
    write(dir, CONTRIBUTIONS_CSV_FILE, &record.primary().to_csv()?)?;
    write(dir, CONTRIBUTIONS_JSON_FILE, json(&record.contributions).as_bytes())?;
    if let Some(model) = &record.final_model {
        write(dir, MODEL_FILE, &model.to_bytes())?;
    }
    Ok(())
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("run data serializes")
}

fn load_tensor(dir: &Path, name: &str) -> Result<ContributionTensor, StoreError> {
    ContributionTensor::from_bytes(&read(dir, name)?)
        .map_err(|source| StoreError::Tensor { path: dir.join(name).display().to_string(), source })
}

/// Reads a run written by [`persist_run`].
pub fn load_run(dir: impl AsRef<Path>) -> Result<RunRecord, StoreError> {
    let dir = dir.as_ref();
    let record_path = dir.join(RECORD_FILE).display().to_string();
    let raw = read(dir, RECORD_FILE)?;
    let value: serde_json::Value = serde_json::from_slice(&raw)
        .map_err(|e| StoreError::Format { path: record_path.clone(), message: e.to_string() })?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(StoreError::Version(record_path, v)),
        None => {
            return Err(StoreError::Format { path: record_path, message: "missing schema_version".into() })
        }
    }
    let mut record: RunRecord = serde_json::from_value(value)
        .map_err(|e| StoreError::Format { path: record_path.clone(), message: e.to_string() })?;
    record.tensor = load_tensor(dir, TENSOR_FILE)?;
    record.completed = load_tensor(dir, COMPLETED_FILE)?;
    let model_path = dir.join(MODEL_FILE);
    record.final_model = if model_path.exists() {
        Some(
            ModelParams::from_bytes(&read(dir, MODEL_FILE)?)
                .map_err(|source| StoreError::Model { path: model_path.display().to_string(), source })?,
        )
    } else {
        None
    };
    let (t, n, _) = record.tensor.dims();
    if t != record.rounds.len() || n != record.clients.len() || record.completed.dims() != record.tensor.dims() {
        return Err(StoreError::Format { path: record_path, message: "tensor shape disagrees with record".into() });
    }
    Ok(record)
}
