//! Engine configuration: one JSON file capturing every knob, echoed into run
//! records so an experiment is reproducible from its outputs alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::BackendsConfig;
use crate::error::{AmarError, Result};
use crate::ingest::{DEFAULT_OVERLAP, DEFAULT_WINDOW};
use crate::retrieval::RetrievalConfig;

/// Where artifacts live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default = "default_graph_path")]
    pub graph: PathBuf,
    #[serde(default = "default_index_path")]
    pub index: PathBuf,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default = "default_datasets_path")]
    pub datasets: PathBuf,
    #[serde(default = "default_runs_path")]
    pub runs: PathBuf,
}

fn default_graph_path() -> PathBuf {
    PathBuf::from("graph.jsonl")
}

fn default_index_path() -> PathBuf {
    PathBuf::from("index.jsonl")
}

fn default_datasets_path() -> PathBuf {
    PathBuf::from("data")
}

fn default_runs_path() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            graph: default_graph_path(),
            index: default_index_path(),
            cache: None,
            datasets: default_datasets_path(),
            runs: default_runs_path(),
        }
    }
}

/// Chunking and graph-construction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_overlap")]
    pub overlap: usize,
    #[serde(default = "default_dedup_threshold")]
    pub dedup_threshold: f64,
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

fn default_overlap() -> usize {
    DEFAULT_OVERLAP
}

fn default_dedup_threshold() -> f64 {
    0.95
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            window: default_window(),
            overlap: default_overlap(),
            dedup_threshold: default_dedup_threshold(),
        }
    }
}

/// The resolved engine configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub backends: BackendsConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    /// Mandatory whenever any backend is a mock; ignored by remote backends.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            paths: PathsConfig::default(),
            retrieval: RetrievalConfig::default(),
            backends: BackendsConfig::default(),
            ingest: IngestConfig::default(),
            seed: Some(42),
        }
    }
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<EngineConfig> {
        let raw = std::fs::read_to_string(path).map_err(|e| AmarError::io(path, e))?;
        let config: EngineConfig = serde_json::from_str(&raw)
            .map_err(|e| AmarError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let rendered = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, rendered + "\n").map_err(|e| AmarError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        if self.ingest.overlap >= self.ingest.window {
            return Err(AmarError::InvalidChunking {
                window: self.ingest.window,
                overlap: self.ingest.overlap,
            });
        }
        if self.backends.any_mock() && self.seed.is_none() {
            return Err(AmarError::MissingSeed);
        }
        Ok(())
    }

    /// Seed recorded in run records; zero for all-remote configurations.
    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}
