use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::npy::Dtype;
use crate::error::{Error, Result};
use crate::repcore::{LayerTag, Method, Parity};

/// One stored representation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub model_id: String,
    pub method: Method,
    pub seed: u64,
    pub layer_index: usize,
    pub parity: Parity,
    pub block_group: Option<usize>,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub m: usize,
    pub p: usize,
    pub dtype: Dtype,
}

impl ManifestEntry {
    pub fn tag(&self) -> LayerTag {
        LayerTag {
            model_id: self.model_id.clone(),
            method: self.method,
            seed: self.seed,
            layer_index: self.layer_index,
            parity: self.parity,
            block_group: self.block_group,
        }
    }
}

/// Index tying representation files to the layer they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub dataset_id: String,
    pub sample_count: usize,
    pub entries: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let manifest: RunManifest =
            serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Manifest(msg) => Error::Manifest(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Manifest("manifest has no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            let tag = e.tag();
            tag.validate().map_err(|err| Error::Manifest(err.to_string()))?;
            if !seen.insert((e.model_id.as_str(), e.layer_index, e.parity)) {
                return Err(Error::Manifest(format!(
                    "duplicate entry for model {:?}, layer {}, parity {}",
                    e.model_id, e.layer_index, e.parity
                )));
            }
            if e.m != self.sample_count {
                return Err(Error::Alignment {
                    expected: self.sample_count,
                    found: e.m,
                    tag: Box::new(tag),
                });
            }
            if e.path.is_absolute() {
                return Err(Error::Manifest(format!(
                    "{}: entry paths must be relative to the manifest",
                    e.path.display()
                )));
            }
        }
        Ok(())
    }
}
