//! Append-only run manifests, one JSON line per artifact-producing command.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::io::read_jsonl;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifests.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    /// Input path to SHA-256 of its bytes (directories hash their sorted
    /// file list and contents).
    pub inputs: BTreeMap<String, String>,
    pub checkpoints: Vec<String>,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<String>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// SHA-256 hex of a file, or of every file under a directory in path order.
pub fn fingerprint(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut files = Vec::new();
    collect(path, &mut files)?;
    for f in files {
        let rel = f.strip_prefix(path).unwrap_or(&f);
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(&f).map_err(|e| Error::io(&f, e))?);
    }
    Ok(format!("{:x}", h.finalize()))
}

fn collect(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if !meta.is_dir() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for e in entries {
        // manifests change on every run and would make fingerprints unstable
        if e.file_name().is_some_and(|n| n == MANIFEST_FILE) {
            continue;
        }
        collect(&e, out)?;
    }
    Ok(())
}

/// Appends one record to `dir/manifests.jsonl`.
pub fn append(dir: &Path, m: &RunManifest) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_FILE);
    let mut line = serde_json::to_vec(m)?;
    line.push(b'\n');
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    f.write_all(&line).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_all(dir: &Path) -> Result<Vec<RunManifest>> {
    read_jsonl(&dir.join(MANIFEST_FILE))
}
