//! Output files, their digests, and the per-run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Derives an independent seed for one consumer of the root seed.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(root.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Lib(capeval::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Everything a run records about itself. Contains no timestamps so reruns
/// produce identical manifests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: &'static str,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub config: Value,
    /// SHA-256 of each emitted file, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

/// Collects output files under one directory and writes the manifest last.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn new(dir: &Path, subcommand: &str, seed: u64) -> Self {
        Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                version: env!("CARGO_PKG_VERSION"),
                seed,
                inputs: BTreeMap::new(),
                config: Value::Null,
                outputs: BTreeMap::new(),
            },
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> &mut Self {
        self.manifest
            .inputs
            .insert(name.to_string(), path.display().to_string());
        self
    }

    pub fn config(&mut self, config: impl Serialize) -> &mut Self {
        self.manifest.config = serde_json::to_value(config).expect("config serializes");
        self
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.dir).map_err(|e| io_error(&self.dir, e))?;
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        self.manifest
            .outputs
            .insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Writes `<subcommand>.manifest.json`.
    pub fn finish(self) -> Result<(), CliError> {
        fs::create_dir_all(&self.dir).map_err(|e| io_error(&self.dir, e))?;
        let name = format!("{}.manifest.json", self.manifest.subcommand);
        let path = self.dir.join(name);
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))
    }
}

/// Percentage with one decimal, as printed in result tables.
pub fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}
