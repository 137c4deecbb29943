use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use cogcast::container::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::Command;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Reproducibility record of one command. Holds no timestamps or output
/// paths, so identical runs write identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub invocation: Command,
    pub settings: serde_json::Value,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new<S: Serialize>(invocation: Command, settings: &S) -> anyhow::Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: invocation.name().to_string(),
            invocation,
            settings: serde_json::to_value(settings)?,
            seeds: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    /// Records the digest of `dir/rel` under the key `rel`.
    pub fn add_output(&mut self, dir: &Path, rel: &str) -> anyhow::Result<()> {
        let digest = file_digest(&dir.join(rel))?;
        self.outputs.insert(rel.to_string(), digest);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
