//! `manifest.json`: what a run read, how it was configured, and what it wrote.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    /// sha256 over `"blob <len>\0"` followed by the file bytes.
    pub sha256: String,
}

#[derive(Serialize)]
pub struct Manifest {
    pub tool_version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub deterministic: bool,
    pub config: RunConfig,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, deterministic: bool) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().collect(),
            seed: cfg.seed,
            deterministic,
            config: cfg.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Hashes a file, or every file below a directory in sorted order.
    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        if path.is_dir() {
            let mut entries: Vec<_> = std::fs::read_dir(path)
                .map_err(|e| CliError::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            entries.sort();
            for p in entries {
                self.input(&p)?;
            }
            return Ok(());
        }
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(InputRecord {
            path: path.to_path_buf(),
            sha256: blob_hash(&bytes),
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn write(&self, out_dir: &Path) -> CliResult<()> {
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
