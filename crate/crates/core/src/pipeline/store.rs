//! Run directory with a hash manifest. Every artifact a command reads must
//! be listed in the manifest and match its recorded SHA-256.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
    pub stage: String,
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// Stage name to the SHA-256 of the run config it ran under.
    pub stages: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct RunDir {
    root: PathBuf,
    pub manifest: Manifest,
    config_hash: String,
}

impl RunDir {
    /// Opens (or, with `create`, initializes) the run directory.
    pub fn open(root: &Path, config_hash: String, create: bool) -> Result<Self> {
        let path = root.join(MANIFEST);
        let manifest = if path.exists() {
            serde_json::from_slice(&fs::read(&path)?)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        } else if create {
            fs::create_dir_all(root)?;
            Manifest::default()
        } else {
            return Err(Error::MissingArtifact(format!(
                "no manifest in {} (run gen-data first)",
                root.display()
            )));
        };
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            config_hash,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.artifacts.contains_key(name)
    }

    pub fn require_stage(&self, stage: &str, by: &str) -> Result<()> {
        if self.manifest.stages.contains_key(stage) {
            Ok(())
        } else {
            Err(Error::StageOrder(format!("{by} needs stage {stage} to have run")))
        }
    }

    /// Reads a manifest-listed artifact and checks its hash.
    pub fn read(&self, name: &str) -> Result<Vec<u8>> {
        let entry = self
            .manifest
            .artifacts
            .get(name)
            .ok_or_else(|| Error::MissingArtifact(format!("{name} is not in the manifest")))?;
        let path = self.root.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
        let got = sha256_hex(&bytes);
        if got != entry.sha256 {
            return Err(Error::HashMismatch(format!(
                "{name}: manifest says {}, file hashes to {got}",
                entry.sha256
            )));
        }
        Ok(bytes)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        serde_json::from_slice(&self.read(name)?).map_err(|e| Error::Format(format!("{name}: {e}")))
    }

    pub fn write(&mut self, name: &str, bytes: &[u8], stage: &str, provenance: Option<String>) -> Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.manifest.artifacts.insert(
            name.to_string(),
            ArtifactEntry {
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
                stage: stage.to_string(),
                provenance,
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T, stage: &str) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes, stage, None)
    }

    /// Writes a file that is not tracked (plots).
    pub fn write_untracked(&self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.root.join(name), bytes)?;
        Ok(())
    }

    /// Records the stage as complete and persists the manifest.
    pub fn finish_stage(&mut self, stage: &str) -> Result<()> {
        self.manifest
            .stages
            .insert(stage.to_string(), self.config_hash.clone());
        let mut bytes = serde_json::to_vec_pretty(&self.manifest)?;
        bytes.push(b'\n');
        let tmp = self.root.join(format!("{MANIFEST}.tmp"));
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, self.root.join(MANIFEST))?;
        Ok(())
    }
}
