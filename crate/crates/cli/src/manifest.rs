//! Run manifests: everything needed to repeat a run bit for bit.

use crate::error::{write_err, Failure, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    /// effective configuration after defaults and overrides, as TOML
    pub config: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest(path: &Path, shown: String) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    Ok(FileDigest { path: shown, sha256: sha256_hex(&bytes) })
}

/// Collects written files for the manifest.
pub struct Outputs {
    pub dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(write_err(dir))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Record a file written by other means.
    pub fn record(&mut self, name: &str) {
        self.written.push(name.to_string());
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(write_err(&path))?;
        self.record(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::io(format!("{name}: {e}")))?;
        text.push('\n');
        self.write(name, text)
    }

    /// Write `manifest.json` covering every recorded output.
    pub fn finish(mut self, command: String, seed: u64, config: String, inputs: Vec<FileDigest>) -> Result<()> {
        let outputs = self
            .written
            .iter()
            .map(|name| digest(&self.dir.join(name), name.clone()))
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            core_version: evcal::VERSION,
            command,
            seed,
            config_sha256: sha256_hex(config.as_bytes()),
            config,
            inputs,
            outputs,
        };
        self.write_json("manifest.json", &manifest)
    }
}
