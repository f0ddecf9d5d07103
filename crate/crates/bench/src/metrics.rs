//! Line-delimited JSON metrics: one record per slot and one aggregate per
//! episode.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Variant;
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub episode: u64,
    /// Slot index, or `None` for the episode aggregate.
    pub slot: Option<u64>,
    /// Extrinsic reward: the slot reward, or the mean over the episode.
    pub reward: f64,
    pub throughput: f64,
    pub latency: f64,
    pub penalty: f64,
    pub violations: u64,
    pub drops: u64,
    pub migrations: u64,
    pub spec_version: u32,
    pub variant: Variant,
    pub seed: u64,
    /// Mean intrinsic bonus given to agents (episode records only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsic: Option<f64>,
}

impl MetricsRecord {
    pub fn is_episode(&self) -> bool {
        self.slot.is_none()
    }
}

/// Sole owner of a metrics file; records are appended in call order.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, BenchError> {
        let file = File::create(path).map_err(|e| BenchError::OutputUnwritable(format!("{}: {e}", path.display())))?;
        Ok(Self { out: BufWriter::new(file) })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<(), BenchError> {
        serde_json::to_writer(&mut self.out, record).map_err(|e| BenchError::OutputUnwritable(e.to_string()))?;
        self.out.write_all(b"\n").map_err(|e| BenchError::OutputUnwritable(e.to_string()))
    }

    pub fn finish(mut self) -> Result<(), BenchError> {
        self.out.flush().map_err(|e| BenchError::OutputUnwritable(e.to_string()))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, BenchError> {
    let file = File::open(path).map_err(|e| BenchError::LogCorrupt(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| BenchError::LogCorrupt(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| BenchError::LogCorrupt(format!("line {}: {e}", i + 1)))?;
        out.push(r);
    }
    Ok(out)
}
