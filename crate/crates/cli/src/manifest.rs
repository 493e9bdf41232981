//! Per-stage run manifests and content-hash based stage skipping.
//!
//! A stage is skipped when its config fingerprint, input hashes, and output
//! hashes all match the manifest left by a previous run. Manifests carry no
//! timestamps or absolute paths, so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kaft_core::error::{KaftError, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_fingerprint: String,
    /// logical input name -> content sha256
    pub inputs: BTreeMap<String, String>,
    /// workdir-relative output path -> content sha256
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    pub notes: Vec<String>,
    /// Stage invocation, reconstructable up to the workdir choice.
    pub command: Vec<String>,
}

impl StageManifest {
    pub fn new(stage: &str, seed: u64, config_fingerprint: String, command: Vec<String>) -> Self {
        Self {
            stage: stage.into(),
            tool_version: TOOL_VERSION.into(),
            seed,
            config_fingerprint,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            counts: BTreeMap::new(),
            notes: Vec::new(),
            command,
        }
    }

    pub fn path(workdir: &Path, stage: &str) -> std::path::PathBuf {
        workdir.join("manifests").join(format!("{stage}.json"))
    }

    pub fn load(workdir: &Path, stage: &str) -> Option<Self> {
        let path = Self::path(workdir, stage);
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn write(&self, workdir: &Path) -> Result<()> {
        let path = Self::path(workdir, &self.stage);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| KaftError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|source| KaftError::Io { path, source })
    }

    /// True when a previous run with identical config and inputs left
    /// outputs that still hash the same.
    pub fn allows_skip(
        workdir: &Path,
        stage: &str,
        config_fingerprint: &str,
        inputs: &BTreeMap<String, String>,
    ) -> bool {
        let Some(previous) = Self::load(workdir, stage) else {
            return false;
        };
        if previous.config_fingerprint != config_fingerprint
            || previous.inputs != *inputs
            || previous.tool_version != TOOL_VERSION
        {
            return false;
        }
        previous.outputs.iter().all(|(rel, hash)| {
            file_sha256(&workdir.join(rel)).is_ok_and(|current| current == *hash)
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| KaftError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

/// Stable fingerprint of any serializable stage config.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("config serializes").as_bytes())
}
