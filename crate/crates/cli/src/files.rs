//! File helpers: JSON-lines streams, binary blobs and provenance sidecars.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// `<path>.meta.json`
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn write_meta(path: &Path, config: &ExperimentConfig, command: &str) -> Result<(), CliError> {
    let meta = serde_json::json!({
        "file": path.file_name().map(|n| n.to_string_lossy().into_owned()),
        "command": command,
        "config_hash": config.hash(),
        "seed": config.seed(),
    });
    let target = meta_path(path);
    fs::write(&target, format!("{meta:#}\n")).map_err(|e| CliError::io(&target, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8], config: &ExperimentConfig, command: &str) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    write_meta(path, config, command)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    rows: impl IntoIterator<Item = &'a T>,
    config: &ExperimentConfig,
    command: &str,
) -> Result<usize, CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut n = 0;
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        out.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
        n += 1;
    }
    out.flush().map_err(|e| CliError::io(path, e))?;
    write_meta(path, config, command)?;
    Ok(n)
}

/// Reads one JSON value per non-blank line. Parse failures are validation
/// errors naming the 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| CliError::validation(format!("{} line {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str, config: &ExperimentConfig, command: &str) -> Result<(), CliError> {
    write_bytes(path, text.as_bytes(), config, command)
}
