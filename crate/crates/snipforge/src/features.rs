//! Feature engineering: the documentation, syntactic, and software-metric
//! dimensions of a data point.

use crate::error::Result;
use crate::langdetect::LanguageDetector;
use crate::mining::RawSnippet;
use crate::pysrc;
use crate::testbed::CutPair;
use crate::tokenizer::BpeTokenizer;
use crate::vuln::VulnSpan;
use serde::{Deserialize, Serialize};
use tree_sitter::Node;

/// Characters treated as whitespace for word splitting and whitespace counts.
const WHITESPACE: [char; 4] = [' ', '\t', '\r', '\n'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxSummary {
    pub n_ast_errors: u32,
    pub n_ast_levels: u32,
    pub n_ast_nodes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LexicalProfile {
    pub n_words: u32,
    pub vocab_size: u32,
    pub n_whitespaces: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageTag {
    /// ISO 639-1 code, or "und" when confidence is below the threshold.
    pub code: String,
    pub confidence: f64,
}

impl LanguageTag {
    pub fn undetermined(confidence: f64) -> Self {
        LanguageTag {
            code: "und".to_string(),
            confidence,
        }
    }

    pub fn is_undetermined(&self) -> bool {
        self.code == "und"
    }
}

/// A snippet enriched with the engineered feature dimensions. Identification
/// fields live in `snippet`; the flattened serialization keeps every schema
/// field at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub point_id: String,
    #[serde(flatten)]
    pub snippet: RawSnippet,
    // documentation dimension
    pub doc_profile: LexicalProfile,
    pub doc_language: LanguageTag,
    pub doc_valid: bool,
    // syntactic dimension
    pub code_profile: LexicalProfile,
    pub syntax: SyntaxSummary,
    pub token_count: u32,
    /// Distinct BPE token ids of the code; the dedup representation.
    pub token_ids: Vec<u32>,
    // software metrics dimension
    pub nloc: u32,
    pub complexity: u32,
    pub n_identifiers: u32,
    // vulnerability dimension
    pub vuln_spans: Vec<VulnSpan>,
    // mutation dimension
    pub mutation: Option<CutPair>,
}

/// Count of named nodes, height over named nodes (root at level 1), and
/// error plus missing nodes in the error-tolerant tree.
pub fn parse_syntax(code: &str) -> SyntaxSummary {
    let tree = pysrc::parse(code);
    let root = tree.root_node();

    fn named_stats(node: Node, depth: u32, nodes: &mut u32, max_depth: &mut u32) {
        *nodes += 1;
        if depth > *max_depth {
            *max_depth = depth;
        }
        let mut cursor = node.walk();
        for child in node.named_children(&mut cursor) {
            named_stats(child, depth + 1, nodes, max_depth);
        }
    }

    fn error_count(node: Node, errors: &mut u32) {
        if node.is_error() || node.is_missing() {
            *errors += 1;
        }
        let mut cursor = node.walk();
        for child in node.children(&mut cursor) {
            error_count(child, errors);
        }
    }

    let mut n_ast_nodes = 0;
    let mut n_ast_levels = 0;
    named_stats(root, 1, &mut n_ast_nodes, &mut n_ast_levels);
    let mut n_ast_errors = 0;
    error_count(root, &mut n_ast_errors);

    SyntaxSummary {
        n_ast_errors,
        n_ast_levels,
        n_ast_nodes,
    }
}

/// Word and whitespace statistics. Words are maximal non-whitespace runs;
/// vocabulary is distinct runs, case-sensitive.
pub fn lexical_profile(text: &str) -> LexicalProfile {
    let mut n_words = 0u32;
    let mut vocab = std::collections::HashSet::new();
    for word in text.split(WHITESPACE).filter(|w| !w.is_empty()) {
        n_words += 1;
        vocab.insert(word);
    }
    let n_whitespaces = text.chars().filter(|c| WHITESPACE.contains(c)).count() as u32;
    LexicalProfile {
        n_words,
        vocab_size: vocab.len() as u32,
        n_whitespaces,
    }
}

/// Distinct identifier-leaf texts in the method's tree. Parameters, locals,
/// attributes, and called names all count once each.
pub fn identifier_count(code: &str) -> u32 {
    let tree = pysrc::parse(code);
    let mut seen = std::collections::HashSet::new();

    fn walk<'a>(node: Node, source: &'a str, seen: &mut std::collections::HashSet<&'a str>) {
        if node.kind() == "identifier" {
            seen.insert(pysrc::node_text(node, source));
        }
        let mut cursor = node.walk();
        for child in node.named_children(&mut cursor) {
            walk(child, source, seen);
        }
    }

    walk(tree.root_node(), code, &mut seen);
    seen.len() as u32
}

/// Decision-point node kinds. Mirrors lizard's token counting: `if`, `elif`,
/// `for`, `while`, `and`, `or`, ternary, except clauses, `assert`, and the
/// `if`/`for` clauses inside comprehensions. `else`/`finally` do not count.
const DECISION_KINDS: [&str; 11] = [
    "if_statement",
    "elif_clause",
    "for_statement",
    "for_in_clause",
    "while_statement",
    "boolean_operator",
    "conditional_expression",
    "except_clause",
    "except_group_clause",
    "assert_statement",
    "if_clause",
];

/// 1 + count of decision points.
pub fn cyclomatic_complexity(code: &str) -> u32 {
    let tree = pysrc::parse(code);

    fn walk(node: Node, count: &mut u32) {
        if DECISION_KINDS.contains(&node.kind()) {
            *count += 1;
        }
        let mut cursor = node.walk();
        for child in node.named_children(&mut cursor) {
            walk(child, count);
        }
    }

    let mut decisions = 0;
    walk(tree.root_node(), &mut decisions);
    1 + decisions
}

/// Lines containing at least one non-whitespace character that is not part of
/// a comment-only line.
pub fn count_nloc(code: &str) -> u32 {
    code.lines()
        .filter(|line| {
            let trimmed = line.trim_start();
            !trimmed.is_empty() && !trimmed.starts_with('#')
        })
        .count() as u32
}

/// Run the detector; keep its top label when confidence reaches the
/// threshold, otherwise tag the text undetermined.
pub fn detect_doc_language(
    docstring: &str,
    threshold: f64,
    detector: &dyn LanguageDetector,
) -> LanguageTag {
    match detector.detect(docstring).into_iter().next() {
        Some((code, confidence)) if confidence >= threshold => LanguageTag { code, confidence },
        Some((_, confidence)) => LanguageTag::undetermined(confidence),
        None => LanguageTag::undetermined(0.0),
    }
}

/// Everything `enrich` needs: the tokenizer model, the language detector, and
/// the thresholds in play.
pub struct Enricher<'a> {
    pub tokenizer: &'a BpeTokenizer,
    pub detector: &'a dyn LanguageDetector,
    /// Docstrings are valid when n_words exceeds this (default 3).
    pub doc_min_words: u32,
    /// Language confidence threshold (default 0.9).
    pub language_threshold: f64,
}

impl Enricher<'_> {
    /// Compute the documentation, syntactic, and metric dimensions. The
    /// vulnerability and mutation dimensions stay empty for later stages.
    pub fn enrich(&self, snippet: RawSnippet) -> Result<DataPoint> {
        let doc_profile = snippet
            .docstring
            .as_deref()
            .map(lexical_profile)
            .unwrap_or_default();
        let doc_language = match snippet.docstring.as_deref() {
            Some(doc) if !doc.is_empty() => {
                detect_doc_language(doc, self.language_threshold, self.detector)
            }
            _ => LanguageTag::undetermined(0.0),
        };
        let doc_valid = doc_profile.n_words > self.doc_min_words;

        let point_id = crate::point_id(&snippet.commit_id, &snippet.path, &snippet.fun_name);
        let code = snippet.code.as_str();
        // Dedup sets come from normalized code so exact duplicates are
        // similarity-1 pairs; token_count measures the code as written.
        let token_ids: Vec<u32> = self
            .tokenizer
            .token_id_set(&crate::curation::normalize_code(code))
            .into_iter()
            .collect();

        Ok(DataPoint {
            point_id,
            doc_profile,
            doc_language,
            doc_valid,
            code_profile: lexical_profile(code),
            syntax: parse_syntax(code),
            token_count: self.tokenizer.count(code),
            token_ids,
            nloc: count_nloc(code),
            complexity: cyclomatic_complexity(code),
            n_identifiers: identifier_count(code),
            vuln_spans: Vec::new(),
            mutation: None,
            snippet,
        })
    }
}
