//! Provenance stamps written next to every generated artifact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "mdxkit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the compact JSON form of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> serde_json::Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            seed,
            config_hash: config_hash(&config)?,
            config,
        })
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("provenance.json"), text + "\n")
    }
}

/// Object keys are sorted by `serde_json`'s default map, so equal configs
/// hash equally.
pub fn config_hash(config: &serde_json::Value) -> serde_json::Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}
