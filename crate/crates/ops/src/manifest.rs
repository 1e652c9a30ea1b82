//! Run manifests: what a command read, wrote and with which seeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{OpsError, Result};

pub const MANIFEST_KIND: &str = "manifest";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub seeds: BTreeMap<String, u64>,
    /// Digests of configuration inputs (calibration, schedule, plan, ...).
    pub configs: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub notes: Vec<String>,
}

fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| OpsError::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: artifact::sha256_hex(&bytes),
    })
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            ..Default::default()
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn config_text(&mut self, name: &str, text: &str) -> &mut Self {
        self.configs.insert(name.to_string(), artifact::sha256_hex(text.as_bytes()));
        self
    }

    pub fn config_file(&mut self, name: &str, path: &Path) -> Result<&mut Self> {
        let d = digest(path)?;
        self.configs.insert(name.to_string(), d.sha256);
        Ok(self)
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.inputs.push(digest(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        self.outputs.push(digest(path)?);
        Ok(self)
    }

    pub fn outputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<&mut Self> {
        for p in paths {
            self.output(p)?;
        }
        Ok(self)
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    /// Writes `manifest.json` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        artifact::write_json(&path, MANIFEST_KIND, 1, self)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        artifact::read_json(path, MANIFEST_KIND, 1)
    }
}
