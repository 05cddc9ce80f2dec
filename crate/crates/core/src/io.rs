//! JSON-lines helpers and run metadata.
//!
//! Every artifact written by the command-line tool is accompanied by
//! `<artifact>.meta.json`, which holds the config hash, seed, version and
//! timestamp. Keeping those out of the artifact itself makes reruns with the
//! same config byte-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, ValidationReport};

/// Reads one record per non-empty line; every malformed line is reported.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut report = ValidationReport::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            Err(e) => report.push(path, i + 1, e.to_string()),
        }
    }
    if report.is_empty() {
        Ok(out)
    } else {
        Err(Error::Validation(report))
    }
}

pub fn write_jsonl_to<T: Serialize>(mut out: impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = create(path)?;
    write_jsonl_to(BufWriter::new(file), items).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Creates `path`, making parent directories as needed.
pub fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub created_unix: u64,
}

impl RunMetadata {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: config_hash(&config),
            config,
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })
    }
}

/// SHA-256 of the compact JSON form (object keys sorted).
pub fn config_hash(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

/// `out.jsonl` → `out.jsonl.meta.json`.
pub fn metadata_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn write_metadata(artifact: &Path, meta: &RunMetadata) -> Result<()> {
    write_json(&metadata_path(artifact), meta)
}
