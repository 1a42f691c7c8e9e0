//! `<command>.manifest.json`: what a stage read, what it wrote, and under which config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, Stage};
use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input path -> sha256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// File names relative to the artifacts directory.
    pub outputs: Vec<String>,
    pub durations_ms: BTreeMap<String, f64>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config_hash,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            durations_ms: BTreeMap::new(),
            extra: serde_json::Value::Null,
        }
    }

    pub fn path(dir: &Path, command: &str) -> PathBuf {
        dir.join(format!("{command}.manifest.json"))
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(Self::path(dir, &self.command), text)?;
        Ok(())
    }

    /// Loads the manifest of an upstream stage and checks it against the active config.
    pub fn require(
        dir: &Path,
        stage: Stage,
        expected_hash: &str,
        force: bool,
    ) -> Result<Self, CliError> {
        let cmd = stage.name();
        let path = Self::path(dir, cmd);
        let missing = |what: &Path| {
            CliError::usage(format!(
                "missing artifact {}; run `specgr {cmd}` first",
                what.display()
            ))
        };
        let bytes = std::fs::read(&path).map_err(|_| missing(&path))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        for out in &manifest.outputs {
            let p = dir.join(out);
            if !p.exists() {
                return Err(missing(&p));
            }
        }
        if manifest.config_hash != expected_hash && !force {
            return Err(CliError::usage(format!(
                "{} was produced under a different config (hash {} vs active {}); \
                 rerun `specgr {cmd}` or pass --force",
                path.display(),
                short(&manifest.config_hash),
                short(expected_hash)
            )));
        }
        Ok(manifest)
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
