//! Task-specific testbed construction: filter, mutate, dedupe, sample.
//!
//! Cuts are line-granular so prefixes stay syntactically meaningful; the cut
//! line is drawn uniformly from the lines strictly after the signature, never
//! emptying the suffix. Per-testbed seeds derive from (name, master seed) and
//! per-point cut seeds from (testbed seed, point id), so builds reproduce
//! independently of each other.

use crate::curation::{dedup_near, DedupReport};
use crate::error::{Error, Result};
use crate::features::DataPoint;
use crate::pysrc;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// A method truncated at a random line after its signature. The prefix plus
/// the expected suffix reconstruct the origin byte-exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutPair {
    /// Point id of the uncut origin.
    pub snippet_id: String,
    /// Signature plus zero or more body lines.
    pub prefix: String,
    pub expected_suffix: String,
    /// 1-based number of the first line NOT in the prefix.
    pub cut_line: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CutMode {
    /// Uniform draw over eligible cut lines.
    #[default]
    Random,
    /// Always cut at the first line after the signature.
    FirstLine,
}

impl FromStr for CutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(CutMode::Random),
            "first-line" => Ok(CutMode::FirstLine),
            other => Err(Error::InvalidConfig(format!("unknown cut mode {other:?}"))),
        }
    }
}

/// Cut a method's code at a line after its signature. Requires at least two
/// lines after the signature's last line so both the draw range and the
/// suffix are non-trivial.
pub fn random_cut(code: &str, seed: u64) -> Result<(String, String, u32)> {
    cut_with_mode(code, seed, CutMode::Random)
}

pub fn cut_with_mode(code: &str, seed: u64, mode: CutMode) -> Result<(String, String, u32)> {
    let methods = pysrc::list_methods(code);
    let method = methods.first().ok_or_else(|| Error::Ineligible {
        reason: "code does not parse to a method definition".into(),
    })?;
    let signature_end = method.signature_end_line;

    // Count physical lines; a trailing newline does not open a new line.
    let total_lines = code.split('\n').count() as u32
        - if code.ends_with('\n') { 1 } else { 0 };
    if total_lines < signature_end + 2 {
        return Err(Error::Ineligible {
            reason: format!(
                "needs at least 2 lines after the signature (signature ends at {signature_end}, \
                 method has {total_lines})"
            ),
        });
    }

    let first_eligible = signature_end + 1;
    let cut_line = match mode {
        CutMode::FirstLine => first_eligible,
        CutMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.gen_range(first_eligible..=total_lines)
        }
    };

    // Byte offset of the start of cut_line: after the (cut_line - 1)-th '\n'.
    let mut offset = 0usize;
    let mut newlines_seen = 0u32;
    for (i, b) in code.bytes().enumerate() {
        if b == b'\n' {
            newlines_seen += 1;
            if newlines_seen == cut_line - 1 {
                offset = i + 1;
                break;
            }
        }
    }
    let prefix = code[..offset].to_string();
    let suffix = code[offset..].to_string();
    debug_assert!(!suffix.is_empty());
    Ok((prefix, suffix, cut_line))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestbedName {
    RandomCut,
    WithDocString,
    FromDocString,
    FromCommit,
    SummarizationGen,
    VulnerabilitySpan,
    RawData,
    RawDataDocstring,
}

impl TestbedName {
    pub const ALL: [TestbedName; 8] = [
        TestbedName::RandomCut,
        TestbedName::WithDocString,
        TestbedName::FromDocString,
        TestbedName::FromCommit,
        TestbedName::SummarizationGen,
        TestbedName::VulnerabilitySpan,
        TestbedName::RawData,
        TestbedName::RawDataDocstring,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TestbedName::RandomCut => "RandomCut",
            TestbedName::WithDocString => "WithDocString",
            TestbedName::FromDocString => "FromDocString",
            TestbedName::FromCommit => "FromCommit",
            TestbedName::SummarizationGen => "SummarizationGen",
            TestbedName::VulnerabilitySpan => "VulnerabilitySpan",
            TestbedName::RawData => "RawData",
            TestbedName::RawDataDocstring => "RawDataDocstring",
        }
    }

    pub fn task(&self) -> SeTask {
        match self {
            TestbedName::RandomCut
            | TestbedName::WithDocString
            | TestbedName::FromDocString
            | TestbedName::RawData => SeTask::CodeCompletion,
            TestbedName::FromCommit => SeTask::CodeGeneration,
            TestbedName::SummarizationGen | TestbedName::RawDataDocstring => {
                SeTask::CodeSummarization
            }
            TestbedName::VulnerabilitySpan => SeTask::VulnerabilityDetection,
        }
    }

    /// Testbeds whose points carry CutPairs.
    pub fn mutates(&self) -> bool {
        matches!(
            self,
            TestbedName::RandomCut | TestbedName::WithDocString | TestbedName::FromCommit
        )
    }
}

impl fmt::Display for TestbedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestbedName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestbedName::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown testbed {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeTask {
    CodeCompletion,
    CodeGeneration,
    CommitGeneration,
    CodeSummarization,
    VulnerabilityDetection,
}

impl SeTask {
    pub fn as_str(&self) -> &'static str {
        match self {
            SeTask::CodeCompletion => "code_completion",
            SeTask::CodeGeneration => "code_generation",
            SeTask::CommitGeneration => "commit_generation",
            SeTask::CodeSummarization => "code_summarization",
            SeTask::VulnerabilityDetection => "vulnerability_detection",
        }
    }
}

impl fmt::Display for SeTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestbedConfig {
    /// Near-dedup threshold (default 0.7).
    pub threshold: f64,
    /// Sample cap after dedup (default 5000).
    pub max_size: usize,
    /// RandomCut family eligibility: token_count > this OR chars > cut_min_chars.
    pub cut_min_tokens: u32,
    pub cut_min_chars: usize,
    /// FromCommit / SummarizationGen NL filters: words > this OR chars > nl_min_chars.
    pub nl_min_words: u32,
    pub nl_min_chars: usize,
    pub cut_mode: CutMode,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        TestbedConfig {
            threshold: 0.7,
            max_size: 5000,
            cut_min_tokens: 10,
            cut_min_chars: 100,
            nl_min_words: 10,
            nl_min_chars: 50,
            cut_mode: CutMode::Random,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Testbed {
    pub name: TestbedName,
    pub task: SeTask,
    pub points: Vec<DataPoint>,
    pub report: DedupReport,
    pub seed: u64,
    pub max_size: usize,
}

fn word_count(text: &str) -> u32 {
    crate::features::lexical_profile(text).n_words
}

/// The testbed's filter predicate, a pure function of the point.
pub fn filter_point(name: TestbedName, point: &DataPoint, cfg: &TestbedConfig) -> bool {
    let cut_sized = point.token_count > cfg.cut_min_tokens
        || point.snippet.code.chars().count() > cfg.cut_min_chars;
    match name {
        TestbedName::RandomCut => cut_sized,
        TestbedName::WithDocString => cut_sized && point.doc_valid,
        TestbedName::FromDocString => point.doc_valid,
        TestbedName::FromCommit => {
            let msg = &point.snippet.commit_message;
            point.doc_valid
                && (word_count(msg) > cfg.nl_min_words || msg.chars().count() > cfg.nl_min_chars)
        }
        TestbedName::SummarizationGen => {
            let doc = point.snippet.docstring.as_deref().unwrap_or("");
            point.doc_valid
                && (word_count(doc) > cfg.nl_min_words || doc.chars().count() > cfg.nl_min_chars)
        }
        TestbedName::VulnerabilitySpan => !point.vuln_spans.is_empty(),
        TestbedName::RawData => true,
        TestbedName::RawDataDocstring => point.doc_valid,
    }
}

/// Build one testbed: filter, mutate where the testbed carries cuts, near-
/// dedup at the configured threshold, then sample down to max_size. The whole
/// build is deterministic per (points, config, master_seed).
pub fn build_testbed(
    name: TestbedName,
    points: &[DataPoint],
    cfg: &TestbedConfig,
    master_seed: u64,
) -> Result<Testbed> {
    let seed = crate::derive_seed(name.as_str(), master_seed);

    let mut selected: Vec<DataPoint> = Vec::new();
    for point in points {
        if !filter_point(name, point, cfg) {
            continue;
        }
        let mut point = point.clone();
        if name.mutates() {
            let cut_seed = crate::derive_seed(&point.point_id, seed);
            match cut_with_mode(&point.snippet.code, cut_seed, cfg.cut_mode) {
                Ok((prefix, suffix, cut_line)) => {
                    point.mutation = Some(CutPair {
                        snippet_id: point.point_id.clone(),
                        prefix,
                        expected_suffix: suffix,
                        cut_line,
                        seed: cut_seed,
                    });
                }
                Err(Error::Ineligible { .. }) => continue,
                Err(e) => return Err(e),
            }
        } else {
            point.mutation = None;
        }
        selected.push(point);
    }

    let (mut kept, report) = dedup_near(selected, cfg.threshold);

    if kept.len() > cfg.max_size {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed("sample", seed));
        let mut indices: Vec<usize> = (0..kept.len()).collect();
        indices.shuffle(&mut rng);
        indices.truncate(cfg.max_size);
        indices.sort_unstable();
        let mut sampled = Vec::with_capacity(cfg.max_size);
        let mut kept_iter = kept.into_iter();
        let mut next = 0usize;
        for idx in indices {
            sampled.push(
                kept_iter
                    .nth(idx - next)
                    .expect("index within kept length"),
            );
            next = idx + 1;
        }
        kept = sampled;
    }

    if kept.is_empty() {
        return Err(Error::EmptyTestbed {
            name: name.to_string(),
        });
    }

    Ok(Testbed {
        name,
        task: name.task(),
        points: kept,
        report,
        seed,
        max_size: cfg.max_size,
    })
}
