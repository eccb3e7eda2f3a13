use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Content hashes of every emitted file, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn build(dir: &Path, files: &[&str]) -> Result<Self, PipelineError> {
        let mut entries = Vec::with_capacity(files.len());
        for &name in files {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| PipelineError::io("manifest", &path, e))?;
            entries.push(ManifestEntry {
                path: name.to_string(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Self { files: entries })
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| PipelineError::stage("manifest", e.to_string()))?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, text + "\n").map_err(|e| PipelineError::io("manifest", &path, e))
    }

    pub fn read(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io("manifest", &path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::stage("manifest", e.to_string()))
    }

    /// Names of files whose size or hash no longer match, or that are gone.
    pub fn mismatches(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|e| match std::fs::read(dir.join(&e.path)) {
                Ok(bytes) => bytes.len() as u64 != e.bytes || sha256_hex(&bytes) != e.sha256,
                Err(_) => true,
            })
            .map(|e| e.path.clone())
            .collect()
    }
}
