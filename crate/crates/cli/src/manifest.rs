use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use e2mc_core::eval::{ExperimentConfig, StreamSource};
use e2mc_core::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to re-run a training command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputHash>,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: Option<f64>,
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, extra_inputs: &[PathBuf]) -> Result<Self> {
        let mut paths: Vec<PathBuf> = extra_inputs.to_vec();
        if let StreamSource::File(p) = &config.source {
            paths.push(p.clone());
        }
        let inputs = paths
            .into_iter()
            .map(|path| Ok(InputHash { sha256: sha256_file(&path)?, path }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tool: crate::TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seeds: config.seeds.clone(),
            inputs,
            started_at: now(),
            finished_at: None,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
