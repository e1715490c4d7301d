//! Content hashes linking every artifact to the inputs it was made from.
//!
//! Each artifact `a.ext` gets a sidecar `a.ext.lineage.json` holding the
//! artifact's own SHA-256 and those of its inputs. A command reading an
//! artifact checks both: the artifact must be unchanged, and every input
//! file it was derived from must still hash to the recorded value.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub sha256: String,
    /// Input name (a path, or `bundled:<name>`) to its hash.
    pub inputs: BTreeMap<String, String>,
}

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".lineage.json");
    PathBuf::from(s)
}

/// Input bytes with their lineage key.
#[derive(Debug, Clone)]
pub struct Input {
    pub key: String,
    pub bytes: Vec<u8>,
}

impl Input {
    pub fn file(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        let key = std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
        Ok(Self { key: key.display().to_string(), bytes })
    }

    pub fn bundled(name: &str, text: &str) -> Self {
        Self { key: format!("bundled:{name}"), bytes: text.as_bytes().to_vec() }
    }

    pub fn text(&self) -> Result<&str, CliError> {
        std::str::from_utf8(&self.bytes).map_err(|_| CliError::Invalid(format!("{} is not UTF-8", self.key)))
    }
}

/// Writes `bytes` to `path` together with its lineage sidecar.
pub fn write_artifact(path: &Path, bytes: &[u8], inputs: &[&Input]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    let lineage = Lineage {
        sha256: sha256(bytes),
        inputs: inputs.iter().map(|i| (i.key.clone(), sha256(&i.bytes))).collect(),
    };
    std::fs::write(sidecar(path), serde_json::to_string_pretty(&lineage)? + "\n")?;
    Ok(())
}

/// Reads an upstream artifact after verifying its lineage, recursively
/// through the artifacts it was itself made from.
pub fn read_artifact(path: &Path) -> Result<Input, CliError> {
    if !path.is_file() {
        return Err(CliError::Invalid(format!("missing upstream artifact {}", path.display())));
    }
    let input = Input::file(path)?;
    verify(path, &input.bytes)?;
    Ok(input)
}

fn verify(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let side = sidecar(path);
    let text = std::fs::read_to_string(&side)
        .map_err(|_| CliError::Stale(format!("{} has no lineage record", path.display())))?;
    let lineage: Lineage =
        serde_json::from_str(&text).map_err(|e| CliError::Stale(format!("{}: {e}", side.display())))?;
    if sha256(bytes) != lineage.sha256 {
        return Err(CliError::Stale(format!("{} changed after it was written", path.display())));
    }
    for (key, hash) in &lineage.inputs {
        if key.starts_with("bundled:") {
            continue;
        }
        let p = Path::new(key);
        let current = std::fs::read(p)
            .map_err(|_| CliError::Stale(format!("{} was made from {}, which is gone", path.display(), key)))?;
        if sha256(&current) != *hash {
            return Err(CliError::Stale(format!("{} was made from an older {}", path.display(), key)));
        }
        if sidecar(p).is_file() {
            verify(p, &current)?;
        }
    }
    Ok(())
}
