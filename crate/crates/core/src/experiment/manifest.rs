use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::trial::TrialSpec;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

/// Provenance record written next to every experiment's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    /// SHA-256 of the resolved config serialized with sorted keys.
    pub config_sha256: String,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub threads: usize,
    pub master_seed: u64,
    pub total_cells: usize,
    pub failed_cells: usize,
    pub trials: Vec<TrialRecord>,
    pub cells: Vec<CellSeed>,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    /// True when there was work to do and none of it succeeded.
    pub fn all_failed(&self) -> bool {
        self.total_cells > 0 && self.failed_cells == self.total_cells
    }

    pub fn artifact(&self, path: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub gamma_over_j: f64,
    #[serde(rename = "L")]
    pub sites: usize,
    /// `trial`, or `walker_base` / `filtered` in a walker study.
    pub role: String,
    pub requested: TrialSpec,
    pub resolved: TrialSpec,
    pub lambda_optimized: bool,
    /// The optimized symmetric trial is standing in for an unspecified reference ansatz.
    pub psi_mc_stand_in: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSeed {
    pub gamma_over_j: f64,
    #[serde(rename = "L")]
    pub sites: usize,
    #[serde(rename = "M")]
    pub shots: u64,
    pub replicate: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub kind: ArtifactKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    /// Absent for the manifest itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Csv,
    Config,
    Manifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hash of the config's canonical JSON; object keys serialize sorted, so key order in the
/// source file does not matter.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let canonical = serde_json::to_value(config)?;
    Ok(sha256_hex(canonical.to_string().as_bytes()))
}
