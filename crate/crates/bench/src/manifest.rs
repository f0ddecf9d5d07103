use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Variant;
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub episodes: u64,
    /// Mean extrinsic episode reward over the trailing window.
    pub final_window_reward: f64,
    pub final_window: usize,
    pub mean_reward: f64,
    pub mean_throughput: f64,
    pub mean_latency: f64,
    pub total_violations: u64,
    pub total_drops: u64,
    pub total_migrations: u64,
    pub final_spec_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecEvent {
    pub episode: u64,
    pub version: u32,
    pub action: String,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub variant: Variant,
    pub seed: u64,
    pub config_hash: String,
    pub scenario_hash: String,
    pub code_version: String,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
    pub metrics_path: PathBuf,
    pub checkpoint_paths: Vec<PathBuf>,
    /// `None` when no episodes ran.
    pub summary: Option<RunSummary>,
    #[serde(default)]
    pub spec_history: Vec<SpecEvent>,
}

impl RunManifest {
    /// Writes via a temporary sibling and rename.
    pub fn write_atomic(&self, path: &Path) -> Result<(), BenchError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        let tmp = path.with_extension("json.tmp");
        let err = |e: std::io::Error| BenchError::OutputUnwritable(format!("{}: {e}", path.display()));
        std::fs::write(&tmp, text).map_err(err)?;
        std::fs::rename(&tmp, path).map_err(err)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::ManifestInvalid(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BenchError::ManifestInvalid(format!("{}: {e}", path.display())))
    }
}
