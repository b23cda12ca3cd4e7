//! Static-analysis findings mapped to per-snippet spans.
//!
//! The scanner is external (CodeQL CLI contract); its SARIF 2.1.0 output is
//! parsed from `results[].locations[].physicalLocation.region` and restricted
//! to rules tagged with the configured CWE top-25 list. Findings attach to a
//! data point when their file region intersects the method's line range, with
//! coordinates rebased so line 1 is the method's signature line.

use crate::error::{Error, Result};
use crate::features::DataPoint;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::process::Command;

/// MITRE CWE top-25, 2021 edition. Overridable via a config file.
pub const CWE_TOP25_2021: &str = include_str!("../assets/cwe_top25_2021.txt");

/// One finding rebased onto a snippet. Lines and columns are 1-based;
/// `end_col` is exclusive, matching the SARIF region convention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnSpan {
    pub cwe_id: String,
    pub rule_id: String,
    pub start_line: u32,
    pub start_col: u32,
    pub end_line: u32,
    pub end_col: u32,
    pub message: String,
}

/// A finding as parsed from SARIF, with absolute file coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFinding {
    pub rule_id: String,
    pub cwe_id: String,
    pub file: String,
    pub start_line: u32,
    pub start_col: Option<u32>,
    pub end_line: u32,
    pub end_col: Option<u32>,
    pub message: String,
}

/// Load a CWE list file: one `CWE-###` per line, `#` comments allowed.
pub fn load_cwe_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(normalize_cwe)
        .collect()
}

/// Normalize CWE spellings: `cwe-078`, `CWE-78`, and `external/cwe/cwe-078`
/// all become `CWE-78`.
fn normalize_cwe(raw: &str) -> String {
    let tail = raw.rsplit('/').next().unwrap_or(raw);
    let digits: String = tail.chars().filter(|c| c.is_ascii_digit()).collect();
    let trimmed = digits.trim_start_matches('0');
    format!("CWE-{}", if trimmed.is_empty() { "0" } else { trimmed })
}

/// Parse SARIF text into findings, keeping only rules tagged with a CWE in
/// the allow list.
pub fn parse_sarif(text: &str, top25: &HashSet<String>) -> Result<Vec<RawFinding>> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::SarifMalformed {
            reason: e.to_string(),
        })?;
    let runs = doc
        .get("runs")
        .and_then(|r| r.as_array())
        .ok_or_else(|| Error::SarifMalformed {
            reason: "missing runs array".into(),
        })?;

    let mut findings = Vec::new();
    for run in runs {
        // ruleId -> CWE tags, from the driver's rule metadata.
        let mut rule_cwes: HashMap<String, Vec<String>> = HashMap::new();
        if let Some(rules) = run
            .pointer("/tool/driver/rules")
            .and_then(|r| r.as_array())
        {
            for rule in rules {
                let Some(id) = rule.get("id").and_then(|i| i.as_str()) else {
                    continue;
                };
                let tags = rule
                    .pointer("/properties/tags")
                    .and_then(|t| t.as_array())
                    .map(|tags| {
                        tags.iter()
                            .filter_map(|t| t.as_str())
                            .filter(|t| t.contains("cwe"))
                            .map(normalize_cwe)
                            .collect::<Vec<_>>()
                    })
                    .unwrap_or_default();
                rule_cwes.insert(id.to_string(), tags);
            }
        }

        let Some(results) = run.get("results").and_then(|r| r.as_array()) else {
            continue;
        };
        for result in results {
            let rule_id = result
                .get("ruleId")
                .and_then(|r| r.as_str())
                .unwrap_or("unknown")
                .to_string();
            let Some(cwe_id) = rule_cwes
                .get(&rule_id)
                .and_then(|cwes| cwes.iter().find(|c| top25.contains(*c)))
                .cloned()
            else {
                continue;
            };
            let message = result
                .pointer("/message/text")
                .and_then(|m| m.as_str())
                .unwrap_or("")
                .to_string();
            let Some(locations) = result.get("locations").and_then(|l| l.as_array()) else {
                continue;
            };
            for location in locations {
                let Some(physical) = location.get("physicalLocation") else {
                    continue;
                };
                let Some(file) = physical
                    .pointer("/artifactLocation/uri")
                    .and_then(|u| u.as_str())
                else {
                    continue;
                };
                let Some(region) = physical.get("region") else {
                    continue;
                };
                let Some(start_line) = region.get("startLine").and_then(|v| v.as_u64()) else {
                    continue;
                };
                let end_line = region
                    .get("endLine")
                    .and_then(|v| v.as_u64())
                    .unwrap_or(start_line);
                findings.push(RawFinding {
                    rule_id: rule_id.clone(),
                    cwe_id: cwe_id.clone(),
                    file: file.to_string(),
                    start_line: start_line as u32,
                    start_col: region
                        .get("startColumn")
                        .and_then(|v| v.as_u64())
                        .map(|v| v as u32),
                    end_line: end_line as u32,
                    end_col: region
                        .get("endColumn")
                        .and_then(|v| v.as_u64())
                        .map(|v| v as u32),
                    message: message.clone(),
                });
            }
        }
    }
    Ok(findings)
}

/// Drive the external scanner over a source root: database-create, then
/// analyze, then parse the SARIF output.
pub fn run_scan(
    source_root: &Path,
    suite: &str,
    scanner: &str,
    top25: &HashSet<String>,
) -> Result<Vec<RawFinding>> {
    let db_dir = source_root.join(".snipforge-codeql-db");
    let sarif_path = source_root.join(".snipforge-scan.sarif");

    let create = Command::new(scanner)
        .arg("database")
        .arg("create")
        .arg(&db_dir)
        .arg("--language=python")
        .arg("--source-root")
        .arg(source_root)
        .arg("--overwrite")
        .output();
    let create = match create {
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::ScannerMissing {
                looked_for: scanner.to_string(),
            })
        }
        other => other.map_err(|e| Error::ScanFailed {
            code: None,
            stderr: e.to_string(),
        })?,
    };
    if !create.status.success() {
        return Err(Error::ScanFailed {
            code: create.status.code(),
            stderr: String::from_utf8_lossy(&create.stderr).into_owned(),
        });
    }

    let analyze = Command::new(scanner)
        .arg("database")
        .arg("analyze")
        .arg(&db_dir)
        .arg(suite)
        .arg("--format=sarif-latest")
        .arg("--output")
        .arg(&sarif_path)
        .output()
        .map_err(|e| Error::ScanFailed {
            code: None,
            stderr: e.to_string(),
        })?;
    if !analyze.status.success() {
        return Err(Error::ScanFailed {
            code: analyze.status.code(),
            stderr: String::from_utf8_lossy(&analyze.stderr).into_owned(),
        });
    }

    let text = std::fs::read_to_string(&sarif_path).map_err(|e| Error::SarifMalformed {
        reason: format!("cannot read {}: {e}", sarif_path.display()),
    })?;
    parse_sarif(&text, top25)
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MappingStats {
    pub attached: u32,
    pub dropped_outside: u32,
}

/// Attach findings to the points whose line range they intersect, rebasing
/// coordinates so line 1 is the method's signature line and clipping regions
/// that straddle a method boundary. Findings outside every method are
/// dropped and counted.
pub fn map_findings(findings: &[RawFinding], points: &mut [DataPoint]) -> MappingStats {
    let mut stats = MappingStats::default();
    for finding in findings {
        let mut attached = false;
        for point in points.iter_mut() {
            if point.snippet.path != finding.file {
                continue;
            }
            let method_start = point.snippet.start_line;
            let line_count = point.snippet.code.lines().count().max(1) as u32;
            let method_end = method_start + line_count - 1;
            if finding.end_line < method_start || finding.start_line > method_end {
                continue;
            }

            let clipped_start = finding.start_line.max(method_start);
            let clipped_end = finding.end_line.min(method_end);
            let start_line = clipped_start - method_start + 1;
            let end_line = clipped_end - method_start + 1;
            let start_col = if clipped_start == finding.start_line {
                finding.start_col.unwrap_or(1)
            } else {
                1
            };
            let end_col = if clipped_end == finding.end_line {
                finding
                    .end_col
                    .unwrap_or_else(|| snippet_line_width(&point.snippet.code, end_line) + 1)
            } else {
                snippet_line_width(&point.snippet.code, end_line) + 1
            };

            let span = VulnSpan {
                cwe_id: finding.cwe_id.clone(),
                rule_id: finding.rule_id.clone(),
                start_line,
                start_col,
                end_line,
                end_col,
                message: finding.message.clone(),
            };
            if !point.vuln_spans.iter().any(|s| {
                s.rule_id == span.rule_id
                    && s.start_line == span.start_line
                    && s.start_col == span.start_col
                    && s.end_line == span.end_line
                    && s.end_col == span.end_col
            }) {
                point.vuln_spans.push(span);
            }
            attached = true;
        }
        if attached {
            stats.attached += 1;
        } else {
            stats.dropped_outside += 1;
        }
    }
    // Stable order regardless of finding order.
    for point in points.iter_mut() {
        point.vuln_spans.sort_by(|a, b| {
            (a.start_line, a.start_col, a.end_line, a.end_col, &a.rule_id)
                .cmp(&(b.start_line, b.start_col, b.end_line, b.end_col, &b.rule_id))
        });
    }
    stats
}

fn snippet_line_width(code: &str, line: u32) -> u32 {
    code.lines()
        .nth(line as usize - 1)
        .map(|l| l.chars().count() as u32)
        .unwrap_or(0)
        .max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cwe_normalization_handles_tags_and_zero_padding() {
        assert_eq!(normalize_cwe("external/cwe/cwe-078"), "CWE-78");
        assert_eq!(normalize_cwe("CWE-787"), "CWE-787");
        assert_eq!(normalize_cwe("cwe-020"), "CWE-20");
    }

    #[test]
    fn bundled_top25_has_25_entries() {
        let list = load_cwe_list(CWE_TOP25_2021);
        assert_eq!(list.len(), 25);
        assert!(list.contains("CWE-78"));
        assert!(list.contains("CWE-787"));
    }

    #[test]
    fn scanner_missing_is_distinguished() {
        let top25 = load_cwe_list(CWE_TOP25_2021);
        let dir = tempfile::tempdir().unwrap();
        let err = run_scan(
            dir.path(),
            "python-security-extended",
            "definitely-not-a-scanner-binary",
            &top25,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ScannerMissing { .. }));
    }

    #[test]
    fn malformed_sarif_is_reported() {
        let top25 = load_cwe_list(CWE_TOP25_2021);
        assert!(matches!(
            parse_sarif("not json", &top25),
            Err(Error::SarifMalformed { .. })
        ));
        assert!(matches!(
            parse_sarif("{}", &top25),
            Err(Error::SarifMalformed { .. })
        ));
    }
}
