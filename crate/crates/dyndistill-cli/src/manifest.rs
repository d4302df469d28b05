//! Run manifests: enough to re-run any output bit-for-bit (config echo,
//! hash, seed, library version) plus a content hash for every file written.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{file_digest, ExperimentConfig};
use dyndistill::Result;

#[derive(Debug, Clone, Serialize)]
pub struct OutputRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub library_version: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputRef>,
    pub config: ExperimentConfig,
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    outputs: Vec<OutputRef>,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> ManifestBuilder {
        ManifestBuilder {
            command: command.to_string(),
            started: Instant::now(),
            outputs: Vec::new(),
        }
    }

    /// Record an output file that must already exist on disk.
    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(OutputRef {
            path: path.to_path_buf(),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    pub fn write(self, cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            config_hash: cfg.hash(),
            seed: cfg.train.seed,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
            config: cfg.clone(),
            command: self.command,
        };
        let path = out_dir.join(format!("manifest-{}.json", manifest.command));
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        crate::write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }
}
