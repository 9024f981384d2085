//! Run manifests: what was run, with which configuration, and what it wrote.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// SHA-256 over the resolved configuration texts.
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub versions: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set so reruns can
/// produce identical manifests.
pub fn now_unix() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn config_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config_parts: &[&str], seeds: Vec<u64>) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("alloc-layers".to_string(), env!("CARGO_PKG_VERSION").to_string());
        RunManifest {
            command: command.to_string(),
            args,
            config_hash: config_hash(config_parts),
            seeds,
            versions,
            started_unix: now_unix(),
            finished_unix: 0,
            outputs: Vec::new(),
        }
    }

    /// First line of every CSV written under this manifest.
    pub fn csv_preamble(&self, manifest_file: &str) -> String {
        format!("# manifest={manifest_file} config_sha256={}\n", self.config_hash)
    }

    pub fn finish(&mut self, path: &Path) -> anyhow::Result<()> {
        self.finished_unix = now_unix();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
