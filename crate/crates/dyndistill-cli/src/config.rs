//! Experiment configuration: one TOML file with full defaulting, overridden
//! by CLI flags. The effective config is echoed into every manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dyndistill::data::DomainGenConfig;
use dyndistill::distill::TrainConfig;
use dyndistill::eval::EvalConfig;
use dyndistill::model::ModelConfig;
use dyndistill::{Error, Result};

/// Optional explicit dataset files; unset paths resolve to the files that
/// `generate` writes under the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetPaths {
    pub base: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub eval: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub out_dir: Option<PathBuf>,
    pub datasets: DatasetPaths,
    pub data: DomainGenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            out_dir: None,
            datasets: DatasetPaths::default(),
            data: DomainGenConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Output directory: `--out` flag beats the file value beats
    /// `runs/<name>`.
    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name))
    }

    /// Apply the global `--seed` override to every seeded component.
    pub fn override_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.data.seed = s;
            self.train.seed = s;
            self.eval.seed = s;
        }
    }

    /// Canonical hash of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_digest(json.as_bytes())
    }

    pub fn dataset_path(&self, which: DatasetKind, out_dir: &Path) -> PathBuf {
        let explicit = match which {
            DatasetKind::Base => &self.datasets.base,
            DatasetKind::Unlabeled => &self.datasets.unlabeled,
            DatasetKind::Eval => &self.datasets.eval,
        };
        explicit.clone().unwrap_or_else(|| {
            out_dir.join("data").join(match which {
                DatasetKind::Base => "base.dds",
                DatasetKind::Unlabeled => "target_unlabeled.dds",
                DatasetKind::Eval => "target_eval.dds",
            })
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum DatasetKind {
    Base,
    Unlabeled,
    Eval,
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex_digest(&std::fs::read(path)?))
}
