//! Per-run manifest: config hash, seed, stage timings and output digests.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{RunConfig, SCHEMA_VERSION};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// Wall-clock seconds per stage.
    pub stages: BTreeMap<String, f64>,
    /// SHA-256 of every output file, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash: config.hash(),
            seed: config.seed,
            stages: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Existing manifest of `dir` when it belongs to the same config, a fresh
    /// one otherwise.
    pub fn open(dir: &Path, config: &RunConfig) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(config));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
        if m.config_hash == config.hash() && m.seed == config.seed {
            Ok(m)
        } else {
            Ok(Self::new(config))
        }
    }

    pub fn record(&mut self, stage: &str, seconds: f64, dir: &Path, files: &[&str]) -> Result<()> {
        self.stages.insert(stage.to_string(), seconds);
        for f in files {
            self.outputs.insert(f.to_string(), file_digest(&dir.join(f))?);
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
