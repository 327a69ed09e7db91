use std::path::{Path, PathBuf};

use driftguard_core::hashing::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::Job;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| anyhow::anyhow!("cannot hash {}: {e}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        })
    }
}

/// Record of one command run. `job` holds every resolved setting, so
/// `driftguard replay` reproduces the outputs byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub job: Job,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub started_at: String,
    pub elapsed_ms: u128,
    /// Command-specific extras such as calibrated z values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl RunManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Failure::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| crate::Failure::Config(format!("manifest {}: {e}", path.display())).into())
    }
}
