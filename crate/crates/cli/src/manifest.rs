use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use bbm_core::{Error, PruneReport, Result};

use crate::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
/// The resolved config, enough to rerun: `bbm <cmd> --config <out>/config.toml`.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PruneTotals {
    pub pruned_count: u64,
    pub pruned_mass_bound: f64,
}

impl From<PruneReport> for PruneTotals {
    fn from(r: PruneReport) -> Self {
        Self {
            pruned_count: r.pruned_count,
            pruned_mass_bound: r.pruned_mass_bound,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub seed_source: String,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub stages: Vec<Stage>,
    pub pruning: PruneTotals,
    pub summary: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    /// Set when the run failed; outputs are then incomplete.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// SHA-256 of the canonical config text with the output directory removed,
/// so the hash only depends on what determines the results.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = None;
    let digest = Sha256::digest(c.canonical().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    }
}
