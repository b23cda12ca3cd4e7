//! Crate-wide error type. Variants carry enough context to report the
//! offending request, file, or template without re-deriving it upstream.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // repo discovery
    #[error("rate limited by host after {retries} retries: {request}")]
    RateLimited { request: String, retries: u32 },
    #[error("no API token available for {request} (set the token environment variable)")]
    AuthMissing { request: String },
    #[error("host unreachable for {request}: {source}")]
    HostUnreachable {
        request: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("clone of {url} failed: {reason}")]
    CloneFailed { url: String, reason: String },
    #[error("cache entry {path} exists but is not a repository: {reason}")]
    CorruptCache { path: PathBuf, reason: String },

    // commit mining
    #[error("repository at {path} unreadable: {reason}")]
    RepoUnreadable { path: PathBuf, reason: String },

    // feature extraction
    #[error("tokenizer model missing or unreadable at {path}: {reason}")]
    VocabMissing { path: PathBuf, reason: String },
    #[error("language detector {name} unavailable")]
    DetectorUnavailable { name: String },

    // vulnerability scanning
    #[error("scanner executable not found ({looked_for})")]
    ScannerMissing { looked_for: String },
    #[error("scan failed (exit {code:?}): {stderr}")]
    ScanFailed { code: Option<i32>, stderr: String },
    #[error("SARIF output malformed: {reason}")]
    SarifMalformed { reason: String },

    // testbed building
    #[error("method ineligible for cutting: {reason}")]
    Ineligible { reason: String },
    #[error("testbed {name} is empty after filtering")]
    EmptyTestbed { name: String },

    // prompt rendering
    #[error("template {template} needs slot {slot} which the data point does not provide")]
    MissingSlot { template: String, slot: String },
    #[error("unknown template id {0}")]
    TemplateUnknown(String),
    #[error("invalid template sequence: {reason}")]
    InvalidSequence { reason: String },

    // storage
    #[error("store is locked by another writer")]
    StoreLocked,
    #[error("store schema mismatch: found version {found}, expected {expected}")]
    SchemaMismatch { found: i64, expected: i64 },
    #[error("bad filter expression: {reason}")]
    BadFilter { reason: String },

    // configuration
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // passthrough
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Git(#[from] git2::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Sql(#[from] rusqlite::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
