//! `manifest.json`, written once per command into its output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::fsutil;

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactVersions {
    pub delaycast: String,
    pub bundle: u32,
    pub weights: u32,
}

impl Default for ArtifactVersions {
    fn default() -> Self {
        Self {
            delaycast: env!("CARGO_PKG_VERSION").to_string(),
            bundle: crate::bundle::FORMAT_VERSION,
            weights: crate::archive::FORMAT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective configuration serialized as compact JSON.
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// The only field that differs between identical runs.
    pub wall_time_s: f64,
    pub versions: ArtifactVersions,
}

pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        fsutil::write_json(&out_dir.join(FILE), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_hex_sha256() {
        let h = config_hash(&serde_json::json!({"a": 1})).unwrap();
        assert_eq!(h.len(), 64);
        // sha256 of the bytes {"a":1}
        assert_eq!(h, "015abd7f5cc57a2dd94b7590f04ad8084273905ee33ec5cebeae62276a97f862");
    }
}
