//! Run and export manifests.
//!
//! Export manifests accompany every JSONL artifact and are byte-stable across
//! runs with equal seed and config. The run manifest additionally records
//! wall-clock stage timings, which are inherently volatile; determinism
//! comparisons should use the export manifests and the run manifest's counts.

use crate::curation::DedupReport;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Manifest written next to each exported JSONL artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    /// "testbed" or "prompts".
    pub artifact: String,
    pub name: String,
    pub task: String,
    pub seed: u64,
    pub config_hash: String,
    pub record_count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<DedupReport>,
    /// Set when the filter eliminated everything.
    pub empty_testbed: bool,
    pub tool_versions: ToolVersions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolVersions {
    pub snipforge: String,
    pub grammar: String,
    /// SHA-256 of the tokenizer model file, hex.
    pub tokenizer_model: String,
    /// Scanner version string, or "absent" when the stage was skipped.
    pub scanner: String,
}

impl ToolVersions {
    pub fn current(tokenizer_model: &str, scanner: &str) -> Self {
        ToolVersions {
            snipforge: env!("CARGO_PKG_VERSION").to_string(),
            grammar: crate::GRAMMAR_VERSION.to_string(),
            tokenizer_model: tokenizer_model.to_string(),
            scanner: scanner.to_string(),
        }
    }
}

/// Funnel counters for one full run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub mined: u64,
    pub enriched: u64,
    pub exact_removed: u64,
    pub near_removed: u64,
    pub kept: u64,
    pub validated: u64,
    pub testbed_sizes: BTreeMap<String, u64>,
}

impl RunCounts {
    /// The funnel can only narrow: enriched <= mined, kept <= enriched,
    /// validated <= kept, removals bounded by what was enriched.
    pub fn is_consistent(&self) -> bool {
        self.enriched <= self.mined
            && self.kept <= self.enriched
            && self.validated <= self.kept
            && self.exact_removed + self.near_removed <= self.enriched
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub counts: RunCounts,
    pub tool_versions: ToolVersions,
    /// Stages that could not run (e.g. scanner missing) and why.
    pub skipped_stages: BTreeMap<String, String>,
    /// Wall-clock seconds per stage. Volatile; excluded from determinism checks.
    pub stage_seconds: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(config_hash: &str, master_seed: u64, tool_versions: ToolVersions) -> Self {
        RunManifest {
            // Reproducible run identity: same config + seed, same id.
            run_id: format!("run-{config_hash}-{master_seed}"),
            config_hash: config_hash.to_string(),
            master_seed,
            counts: RunCounts::default(),
            tool_versions,
            skipped_stages: BTreeMap::new(),
            stage_seconds: BTreeMap::new(),
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
