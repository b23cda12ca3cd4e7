//! Pipeline configuration: one TOML (or JSON) file with the window, the
//! named thresholds, seeds, and tool paths. Every threshold from the data
//! collection procedure is a named default here.

use crate::discovery::RepoQuery;
use crate::error::{Error, Result};
use crate::mining::TimeWindow;
use crate::testbed::{CutMode, TestbedConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    /// Host search query for repository discovery.
    pub query: RepoQuery,
    /// Explicit repositories (clone URLs or local paths). When non-empty,
    /// discovery is skipped and these are mined directly.
    pub repos: Vec<String>,
    /// Contamination-safe commit window.
    pub window: TimeWindow,
    pub cache_dir: PathBuf,
    pub store_path: PathBuf,
    pub out_dir: PathBuf,
    pub thresholds: Thresholds,
    pub master_seed: u64,
    /// Tokenizer model file (JSON vocab + merges). Required for enrichment;
    /// no default vocabulary is bundled.
    pub tokenizer_model: PathBuf,
    /// Optional template catalog override.
    pub template_catalog: Option<PathBuf>,
    pub scanner: ScannerConfig,
    /// Grammar pin recorded in manifests.
    pub grammar_version: String,
    /// Review worksheet with verdicts to apply during curation, if any.
    pub review_verdicts: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Near-duplicate Jaccard threshold.
    pub near_dup: f64,
    /// Docstring language confidence threshold.
    pub language_confidence: f64,
    /// A docstring is valid when its word count exceeds this.
    pub doc_min_words: u32,
    /// RandomCut eligibility: more than this many tokens...
    pub cut_min_tokens: u32,
    /// ...or more than this many characters.
    pub cut_min_chars: usize,
    /// NL quality for FromCommit/SummarizationGen: more than this many words...
    pub nl_min_words: u32,
    /// ...or more than this many characters.
    pub nl_min_chars: usize,
    /// Testbed sample cap.
    pub testbed_max_size: usize,
    /// Manual review sample size.
    pub review_sample: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            near_dup: 0.7,
            language_confidence: 0.9,
            doc_min_words: 3,
            cut_min_tokens: 10,
            cut_min_chars: 100,
            nl_min_words: 10,
            nl_min_chars: 50,
            testbed_max_size: 5000,
            review_sample: 960,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScannerConfig {
    /// Scanner executable; looked up on PATH when not absolute.
    pub codeql_path: String,
    /// Query suite id passed to the analyze step.
    pub suite: String,
    /// CWE allow-list file; the bundled MITRE 2021 top-25 when absent.
    pub cwe_list: Option<PathBuf>,
    /// Max concurrent scanner processes.
    pub max_concurrent: usize,
}

impl Default for ScannerConfig {
    fn default() -> Self {
        ScannerConfig {
            codeql_path: "codeql".to_string(),
            suite: "codeql/python-queries:codeql-suites/python-security-extended.qls".to_string(),
            cwe_list: None,
            max_concurrent: 2,
        }
    }
}

impl Default for Config {
    fn default() -> Self {
        Config {
            query: RepoQuery::default(),
            repos: Vec::new(),
            window: "2022-01-01..2023-01-01".parse().expect("valid default window"),
            cache_dir: PathBuf::from("cache"),
            store_path: PathBuf::from("snipforge.db"),
            out_dir: PathBuf::from("out"),
            thresholds: Thresholds::default(),
            master_seed: 0,
            tokenizer_model: PathBuf::from("tokenizer.json"),
            template_catalog: None,
            scanner: ScannerConfig::default(),
            grammar_version: crate::GRAMMAR_VERSION.to_string(),
            review_verdicts: None,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.query.validate()?;
        let t = &self.thresholds;
        if !(t.near_dup > 0.0 && t.near_dup <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "near_dup threshold {} outside (0, 1]",
                t.near_dup
            )));
        }
        if !(0.0..=1.0).contains(&t.language_confidence) {
            return Err(Error::InvalidConfig(format!(
                "language confidence {} outside [0, 1]",
                t.language_confidence
            )));
        }
        if t.testbed_max_size == 0 {
            return Err(Error::InvalidConfig("testbed_max_size must be positive".into()));
        }
        Ok(())
    }

    pub fn testbed_config(&self) -> TestbedConfig {
        TestbedConfig {
            threshold: self.thresholds.near_dup,
            max_size: self.thresholds.testbed_max_size,
            cut_min_tokens: self.thresholds.cut_min_tokens,
            cut_min_chars: self.thresholds.cut_min_chars,
            nl_min_words: self.thresholds.nl_min_words,
            nl_min_chars: self.thresholds.nl_min_chars,
            cut_mode: CutMode::Random,
        }
    }

    /// Hash of the semantically relevant configuration; goes into manifests
    /// so runs are comparable. Scratch locations (cache, store, output) do
    /// not affect results, so they are excluded.
    pub fn hash(&self) -> String {
        let semantic = serde_json::json!({
            "query": self.query,
            "repos": self.repos,
            "window": self.window,
            "thresholds": self.thresholds,
            "master_seed": self.master_seed,
            "tokenizer_model": self.tokenizer_model,
            "template_catalog": self.template_catalog,
            "scanner": self.scanner,
            "grammar_version": self.grammar_version,
        });
        let canonical = serde_json::to_string(&semantic).expect("config serializes");
        crate::manifest::sha256_hex(canonical.as_bytes())[..16].to_string()
    }
}
