//! Append-only run manifest, one JSON object per line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;
use crate::error::{HarnessError, PersistError, Result};
use crate::persist::{read_bytes, FORMAT_VERSION};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub kind: String,
    /// Relative to the run directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub format_version: u32,
    pub config_hash: String,
    pub tool_version: String,
    pub command: String,
    pub started_unix: f64,
    pub wall_seconds: f64,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Collects the artifacts one command produces.
pub struct CommandRecord {
    command: String,
    started: f64,
    clock: std::time::Instant,
    artifacts: Vec<(String, PathBuf)>,
}

impl CommandRecord {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: unix_now(),
            clock: std::time::Instant::now(),
            artifacts: Vec::new(),
        }
    }

    pub fn add(&mut self, kind: &str, rel: impl Into<PathBuf>) {
        self.artifacts.push((kind.to_string(), rel.into()));
    }

    /// Appends one line to the manifest. Every listed path must exist.
    pub fn commit(self, run_dir: &Path, config_hash: &str) -> Result<ManifestEntry> {
        let mut artifacts = Vec::with_capacity(self.artifacts.len());
        for (kind, rel) in self.artifacts {
            let bytes = read_bytes(&run_dir.join(&rel))?;
            artifacts.push(ArtifactEntry {
                kind,
                path: rel,
                sha256: sha256_hex(&bytes),
            });
        }
        let entry = ManifestEntry {
            format_version: FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            command: self.command,
            started_unix: self.started,
            wall_seconds: self.clock.elapsed().as_secs_f64(),
            artifacts,
        };
        let path = run_dir.join(MANIFEST_FILE);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| HarnessError::from(PersistError::Io { path: path.clone(), source }))?;
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        f.write_all(line.as_bytes())
            .map_err(|source| HarnessError::from(PersistError::Io { path, source }))?;
        Ok(entry)
    }
}

pub fn read_manifest(run_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = run_dir.join(MANIFEST_FILE);
    let text = String::from_utf8(read_bytes(&path)?).map_err(HarnessError::runtime)?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display()))))
        .collect()
}
