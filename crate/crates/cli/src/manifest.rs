use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one command run: enough to rerun it and to check its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    /// Output file name → SHA-256 hex digest.
    pub outputs: BTreeMap<String, String>,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn new(
        command: &str,
        params: serde_json::Value,
        seed: Option<u64>,
        threads: usize,
        out: &Path,
        outputs: &[String],
        elapsed: Duration,
    ) -> Result<Self> {
        let mut sums = BTreeMap::new();
        for name in outputs {
            let path = out.join(name);
            let bytes = fs::read(&path).with_context(|| format!("hashing {}", path.display()))?;
            sums.insert(name.clone(), hex::encode(Sha256::digest(&bytes)));
        }
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            params,
            seed,
            threads,
            outputs: sums,
            duration_secs: elapsed.as_secs_f64(),
        })
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let path = out.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))
    }
}
