//! Corpus curation: exact and near dedup, validation rules, and manual
//! review sampling.
//!
//! Near-dedup is a greedy first-kept-wins pass in input order. Candidate
//! lookup goes through an inverted token index with size-ratio pruning, which
//! is exact: any pair with Jaccard above a positive threshold shares at least
//! one token, so keep/drop decisions are identical to the brute-force pass.

use crate::error::Result;
use crate::features::DataPoint;
use crate::mining::TimeWindow;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    pub input_count: u64,
    pub exact_removed: u64,
    pub near_removed: u64,
    pub threshold: f64,
    pub duplicate_pct: f64,
}

impl DedupReport {
    fn new(input_count: u64, exact_removed: u64, near_removed: u64, threshold: f64) -> Self {
        let duplicate_pct = if input_count > 0 {
            100.0 * (exact_removed + near_removed) as f64 / input_count as f64
        } else {
            0.0
        };
        DedupReport {
            input_count,
            exact_removed,
            near_removed,
            threshold,
            duplicate_pct,
        }
    }
}

/// Code normalization shared by exact dedup and the dedup token sets:
/// trailing whitespace stripped per line. Exact duplicates therefore have
/// identical token sets (similarity 1), so near-dedup subsumes exact dedup.
pub fn normalize_code(code: &str) -> String {
    code.lines()
        .map(|l| l.trim_end())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Keep the first occurrence of each normalized code text, order preserved.
/// The report covers only the exact pass (near_removed = 0).
pub fn dedup_exact(points: Vec<DataPoint>) -> (Vec<DataPoint>, DedupReport) {
    let input_count = points.len() as u64;
    let mut seen = HashSet::new();
    let mut kept = Vec::with_capacity(points.len());
    for point in points {
        if seen.insert(normalize_code(&point.snippet.code)) {
            kept.push(point);
        }
    }
    let exact_removed = input_count - kept.len() as u64;
    let report = DedupReport::new(input_count, exact_removed, 0, 1.0);
    (kept, report)
}

/// |A ∩ B| / |A ∪ B| over token-id sets; 1.0 when both sets are empty.
pub fn jaccard(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let intersection = a.intersection(b).count();
    let union = a.len() + b.len() - intersection;
    intersection as f64 / union as f64
}

/// Greedy near-dedup in input order: a point is dropped iff its BPE token set
/// has Jaccard >= threshold with any already-kept point's set.
pub fn dedup_near(points: Vec<DataPoint>, threshold: f64) -> (Vec<DataPoint>, DedupReport) {
    assert!(
        threshold > 0.0 && threshold <= 1.0,
        "threshold must be in (0, 1]"
    );
    let input_count = points.len() as u64;
    let mut kept: Vec<DataPoint> = Vec::new();
    let mut kept_sets: Vec<BTreeSet<u32>> = Vec::new();
    // token id -> indices into kept with that token
    let mut index: HashMap<u32, Vec<usize>> = HashMap::new();
    let mut kept_empty: Option<usize> = None;

    for point in points {
        let set: BTreeSet<u32> = point.token_ids.iter().copied().collect();
        let duplicate = if set.is_empty() {
            // jaccard(∅, ∅) = 1.0, so any previously kept empty set matches.
            kept_empty.is_some()
        } else {
            let mut candidates: Vec<usize> = set
                .iter()
                .filter_map(|tok| index.get(tok))
                .flatten()
                .copied()
                .collect();
            candidates.sort_unstable();
            candidates.dedup();
            candidates.into_iter().any(|i| {
                let other = &kept_sets[i];
                // J <= min/max of the sizes; prune pairs that cannot reach t.
                let (lo, hi) = if set.len() < other.len() {
                    (set.len(), other.len())
                } else {
                    (other.len(), set.len())
                };
                if (lo as f64) < threshold * hi as f64 {
                    return false;
                }
                jaccard(&set, other) >= threshold
            })
        };

        if duplicate {
            continue;
        }
        let kept_idx = kept.len();
        if set.is_empty() {
            kept_empty = Some(kept_idx);
        }
        for &tok in &set {
            index.entry(tok).or_default().push(kept_idx);
        }
        kept_sets.push(set);
        kept.push(point);
    }

    let near_removed = input_count - kept.len() as u64;
    let report = DedupReport::new(input_count, 0, near_removed, threshold);
    (kept, report)
}

/// Exact pass followed by the near pass, with a combined report.
pub fn curate(points: Vec<DataPoint>, threshold: f64) -> (Vec<DataPoint>, DedupReport) {
    let input_count = points.len() as u64;
    let (after_exact, exact_report) = dedup_exact(points);
    let (kept, near_report) = dedup_near(after_exact, threshold);
    let report = DedupReport::new(
        input_count,
        exact_report.exact_removed,
        near_report.near_removed,
        threshold,
    );
    (kept, report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationFailure {
    OutOfWindow,
    ShortDocstring,
    LanguageUnknown,
    EmptyCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub point_id: String,
    pub passed: bool,
    pub reasons: Vec<ValidationFailure>,
}

/// Window and meaningfulness rules. `require_doc` additionally enforces the
/// docstring length and language checks.
pub fn validate_point(
    point: &DataPoint,
    window: TimeWindow,
    require_doc: bool,
) -> ValidationResult {
    let mut reasons = Vec::new();
    if !window.contains(point.snippet.committer_date) {
        reasons.push(ValidationFailure::OutOfWindow);
    }
    if require_doc {
        if point.doc_profile.n_words <= 3 {
            reasons.push(ValidationFailure::ShortDocstring);
        }
        if point.doc_language.is_undetermined() {
            reasons.push(ValidationFailure::LanguageUnknown);
        }
    }
    if point.nloc == 0 {
        reasons.push(ValidationFailure::EmptyCode);
    }
    ValidationResult {
        point_id: point.point_id.clone(),
        passed: reasons.is_empty(),
        reasons,
    }
}

/// Uniform sample without replacement, deterministic per seed, returned in
/// corpus order. Writes a review worksheet with empty verdict columns.
pub fn sample_for_manual_review<'a>(
    points: &'a [DataPoint],
    n: usize,
    seed: u64,
    worksheet: Option<&Path>,
) -> Result<Vec<&'a DataPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..points.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(n);
    indices.sort_unstable();
    let sample: Vec<&DataPoint> = indices.into_iter().map(|i| &points[i]).collect();

    if let Some(path) = worksheet {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record([
            "point_id",
            "repository",
            "fun_name",
            "docstring",
            "code",
            "verdict",
            "reviewer",
            "notes",
        ])?;
        for point in &sample {
            writer.write_record([
                point.point_id.as_str(),
                point.snippet.repository.as_str(),
                point.snippet.fun_name.as_str(),
                point.snippet.docstring.as_deref().unwrap_or(""),
                point.snippet.code.as_str(),
                "",
                "",
                "",
            ])?;
        }
        writer.flush().map_err(|e| crate::Error::io(path, e))?;
    }
    Ok(sample)
}

/// Apply verdicts recorded in a filled review worksheet: a point whose
/// verdict is `reject` (case-insensitive) is dropped; anything else keeps it.
pub fn apply_review_verdicts(points: Vec<DataPoint>, worksheet: &Path) -> Result<Vec<DataPoint>> {
    let mut reader = csv::Reader::from_path(worksheet)?;
    let headers = reader.headers()?.clone();
    let id_col = headers.iter().position(|h| h == "point_id");
    let verdict_col = headers.iter().position(|h| h == "verdict");
    let (Some(id_col), Some(verdict_col)) = (id_col, verdict_col) else {
        return Err(crate::Error::BadFilter {
            reason: "worksheet is missing point_id or verdict columns".into(),
        });
    };
    let mut rejected = HashSet::new();
    for record in reader.records() {
        let record = record?;
        let verdict = record.get(verdict_col).unwrap_or("").trim();
        if verdict.eq_ignore_ascii_case("reject") {
            if let Some(id) = record.get(id_col) {
                rejected.insert(id.to_string());
            }
        }
    }
    Ok(points
        .into_iter()
        .filter(|p| !rejected.contains(&p.point_id))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{LanguageTag, LexicalProfile, SyntaxSummary};
    use crate::mining::RawSnippet;
    use chrono::{TimeZone, Utc};

    pub(crate) fn point_with(code: &str, token_ids: Vec<u32>) -> DataPoint {
        let snippet = RawSnippet {
            commit_id: format!("{:040x}", token_ids.iter().sum::<u32>()),
            repository: "owner/repo".into(),
            path: "src/mod.py".into(),
            file_name: "mod.py".into(),
            fun_name: format!("f_{}", code.len()),
            commit_message: "add".into(),
            code: code.to_string(),
            docstring: None,
            signature: "def f():".into(),
            start_line: 1,
            committer_date: Utc.with_ymd_and_hms(2022, 6, 1, 0, 0, 0).unwrap(),
        };
        DataPoint {
            point_id: crate::point_id(&snippet.commit_id, &snippet.path, code),
            snippet,
            doc_profile: LexicalProfile::default(),
            doc_language: LanguageTag::undetermined(0.0),
            doc_valid: false,
            code_profile: LexicalProfile::default(),
            syntax: SyntaxSummary {
                n_ast_errors: 0,
                n_ast_levels: 1,
                n_ast_nodes: 1,
            },
            token_count: token_ids.len() as u32,
            token_ids,
            nloc: 1,
            complexity: 1,
            n_identifiers: 1,
            vuln_spans: Vec::new(),
            mutation: None,
        }
    }

    #[test]
    fn exact_dedup_keeps_first_occurrence() {
        let points = vec![
            point_with("def a():\n    pass", vec![1]),
            point_with("def a():\n    pass", vec![2]),
            point_with("def b():\n    pass", vec![3]),
        ];
        let (kept, report) = dedup_exact(points);
        assert_eq!(kept.len(), 2);
        assert_eq!(report.exact_removed, 1);
        assert_eq!(kept[0].token_ids, vec![1]);
    }

    #[test]
    fn exact_dedup_on_unique_input_is_identity() {
        let points = vec![
            point_with("def a(): pass", vec![1]),
            point_with("def b(): pass", vec![2]),
        ];
        let (kept, report) = dedup_exact(points);
        assert_eq!(kept.len(), 2);
        assert_eq!(report.exact_removed, 0);
    }

    #[test]
    fn exact_dedup_strips_trailing_whitespace_per_line() {
        let points = vec![
            point_with("def a():\n    pass", vec![1]),
            point_with("def a():   \n    pass  ", vec![2]),
        ];
        let (kept, report) = dedup_exact(points);
        assert_eq!(kept.len(), 1);
        assert_eq!(report.exact_removed, 1);
    }

    #[test]
    fn jaccard_basics() {
        let set = |ids: &[u32]| ids.iter().copied().collect::<BTreeSet<u32>>();
        assert_eq!(jaccard(&set(&[1, 2, 3]), &set(&[1, 2, 3])), 1.0);
        assert_eq!(jaccard(&set(&[1, 2]), &set(&[3, 4])), 0.0);
        assert_eq!(jaccard(&set(&[1, 2, 3]), &set(&[2, 3, 4])), 0.5);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 1.0);
    }

    #[test]
    fn near_dedup_drops_only_above_threshold() {
        // {1..10} vs {1..7,11,12,13}: intersection 7, union 13 -> ~0.538
        let a = point_with("a", (1..=10).collect());
        let b = point_with("b", (1..=7).chain(11..=13).collect());
        // {1..10} vs {1..9,11}: intersection 9, union 11 -> ~0.818
        let c = point_with("c", (1..=9).chain(std::iter::once(11)).collect());
        let (kept, report) = dedup_near(vec![a, b, c], 0.7);
        assert_eq!(kept.len(), 2);
        assert_eq!(report.near_removed, 1);
    }

    #[test]
    fn near_dedup_threshold_one_collapses_identical_sets_only() {
        let a = point_with("a", vec![1, 2, 3]);
        let b = point_with("b", vec![1, 2, 3]);
        let c = point_with("c", vec![1, 2, 3, 4]);
        let (kept, _) = dedup_near(vec![a, b, c], 1.0);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn near_dedup_collapses_empty_token_sets() {
        let a = point_with("a", vec![]);
        let b = point_with("b", vec![]);
        let (kept, report) = dedup_near(vec![a, b], 0.7);
        assert_eq!(kept.len(), 1);
        assert_eq!(report.near_removed, 1);
    }

    #[test]
    fn near_dedup_is_idempotent() {
        let points: Vec<DataPoint> = (0..20)
            .map(|i| point_with(&format!("p{i}"), vec![i, i + 1, i + 2, 100]))
            .collect();
        let (once, _) = dedup_near(points, 0.7);
        let (twice, report) = dedup_near(once.clone(), 0.7);
        assert_eq!(once, twice);
        assert_eq!(report.near_removed, 0);
    }

    #[test]
    fn validation_flags_each_rule() {
        let window: TimeWindow = "2022-01-01..2023-01-01".parse().unwrap();
        let mut point = point_with("def f():\n    pass", vec![1]);
        point.snippet.committer_date = Utc.with_ymd_and_hms(2021, 6, 1, 0, 0, 0).unwrap();
        let result = validate_point(&point, window, false);
        assert!(!result.passed);
        assert_eq!(result.reasons, vec![ValidationFailure::OutOfWindow]);

        let mut point = point_with("def f():\n    pass", vec![1]);
        point.doc_profile.n_words = 3;
        point.doc_language = LanguageTag {
            code: "en".into(),
            confidence: 0.99,
        };
        let result = validate_point(&point, window, true);
        assert_eq!(result.reasons, vec![ValidationFailure::ShortDocstring]);

        let mut point = point_with("def f():\n    pass", vec![1]);
        point.doc_profile.n_words = 12;
        let result = validate_point(&point, window, true);
        assert_eq!(result.reasons, vec![ValidationFailure::LanguageUnknown]);

        let mut point = point_with("", vec![1]);
        point.nloc = 0;
        let result = validate_point(&point, window, false);
        assert_eq!(result.reasons, vec![ValidationFailure::EmptyCode]);

        let mut point = point_with("def f():\n    pass", vec![1]);
        point.doc_profile.n_words = 12;
        point.doc_language = LanguageTag {
            code: "en".into(),
            confidence: 0.99,
        };
        assert!(validate_point(&point, window, true).passed);
    }

    #[test]
    fn review_sample_is_deterministic_and_bounded() {
        let points: Vec<DataPoint> = (0..50u32)
            .map(|i| point_with(&format!("code {i}"), vec![i]))
            .collect();
        let a = sample_for_manual_review(&points, 10, 7, None).unwrap();
        let b = sample_for_manual_review(&points, 10, 7, None).unwrap();
        let ids_a: Vec<&str> = a.iter().map(|p| p.point_id.as_str()).collect();
        let ids_b: Vec<&str> = b.iter().map(|p| p.point_id.as_str()).collect();
        assert_eq!(ids_a, ids_b);
        assert_eq!(ids_a.len(), 10);

        assert!(sample_for_manual_review(&points, 0, 7, None)
            .unwrap()
            .is_empty());
        assert_eq!(
            sample_for_manual_review(&points, 500, 7, None).unwrap().len(),
            50
        );
    }

    #[test]
    fn worksheet_roundtrip_applies_reject_verdicts() {
        let dir = tempfile::tempdir().unwrap();
        let sheet = dir.path().join("review.csv");
        let points: Vec<DataPoint> = (0..5u32)
            .map(|i| point_with(&format!("code {i}"), vec![i]))
            .collect();
        sample_for_manual_review(&points, 5, 1, Some(&sheet)).unwrap();

        // Mark the first sampled row as rejected.
        let text = std::fs::read_to_string(&sheet).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let first_id = lines[1].split(',').next().unwrap().to_string();
        lines[1] = lines[1].replacen(",,,", ",reject,rev,", 1);
        std::fs::write(&sheet, lines.join("\n")).unwrap();

        let kept = apply_review_verdicts(points, &sheet).unwrap();
        assert_eq!(kept.len(), 4);
        assert!(kept.iter().all(|p| p.point_id != first_id));
    }
}
