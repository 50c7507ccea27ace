//! Versioned JSON persistence of a trained model.
//!
//! Reals are written in shortest round-trip form, so a load followed by a
//! save reproduces the file byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::TrainedModel;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    /// What the file was used for, e.g. `run1.knee` or `profile`.
    pub role: String,
    /// File name without directories, so the record does not depend on
    /// where the inputs happened to live.
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub created_unix: u64,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    /// Creation time from `SOURCE_DATE_EPOCH` when set, else the clock.
    pub fn now(seed: Option<u64>, inputs: Vec<InputDigest>) -> Self {
        let created_unix = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or_else(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            });
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix,
            seed,
            inputs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub model: TrainedModel,
    pub provenance: Provenance,
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest_input(role: &str, path: impl AsRef<Path>) -> Result<InputDigest> {
    let path = path.as_ref();
    Ok(InputDigest {
        role: role.to_string(),
        file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string()),
        sha256: sha256_file(path)?,
    })
}

impl ModelFile {
    pub fn new(model: TrainedModel, provenance: Provenance) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model,
            provenance,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Config("model file has no schema_version".into()))?;
        if found != SCHEMA_VERSION as u64 {
            return Err(Error::Version {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: SCHEMA_VERSION,
            });
        }
        let file: Self = serde_json::from_value(value)?;
        file.model.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Recomputes the digest of every recorded input found in `dir`.
    pub fn verify_inputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        for input in &self.provenance.inputs {
            let path = dir.as_ref().join(&input.file);
            if sha256_file(&path)? != input.sha256 {
                return Err(Error::Digest {
                    path: path.display().to_string(),
                });
            }
        }
        Ok(())
    }
}
