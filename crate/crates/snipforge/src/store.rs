//! Relational store and dataset export.
//!
//! Single-file SQLite database; one writer at a time, readers concurrent.
//! The schema mirrors the seven feature dimensions as linked tables keyed by
//! point_id (see docs/schema.md). Exports are JSONL with stable key order,
//! byte-stable across runs with equal seed and config.

use crate::curation::DedupReport;
use crate::error::{Error, Result};
use crate::features::{DataPoint, LanguageTag, LexicalProfile, SyntaxSummary};
use crate::mining::RawSnippet;
use crate::prompts::PromptRecord;
use crate::testbed::{CutPair, SeTask, Testbed, TestbedName};
use crate::vuln::VulnSpan;
use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, OptionalExtension};
use serde::Serialize;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

const SCHEMA_VERSION: i64 = 1;

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS meta (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
-- dimension 1: identification
CREATE TABLE IF NOT EXISTS snippets (
    point_id       TEXT PRIMARY KEY,
    commit_id      TEXT NOT NULL,
    repository     TEXT NOT NULL,
    path           TEXT NOT NULL,
    file_name      TEXT NOT NULL,
    fun_name       TEXT NOT NULL,
    commit_message TEXT NOT NULL,
    code           TEXT NOT NULL,
    docstring      TEXT,
    signature      TEXT NOT NULL,
    start_line     INTEGER NOT NULL,
    committer_date TEXT NOT NULL,
    kept           INTEGER NOT NULL DEFAULT 1,
    valid_base     INTEGER,
    valid_doc      INTEGER,
    UNIQUE (commit_id, path, fun_name)
);
-- dimension 2: documentation
CREATE TABLE IF NOT EXISTS documentation (
    point_id            TEXT PRIMARY KEY REFERENCES snippets(point_id) ON DELETE CASCADE,
    n_words             INTEGER NOT NULL,
    vocab_size          INTEGER NOT NULL,
    n_whitespaces       INTEGER NOT NULL,
    language            TEXT NOT NULL,
    language_confidence REAL NOT NULL,
    doc_valid           INTEGER NOT NULL
);
-- dimension 3: syntactic
CREATE TABLE IF NOT EXISTS syntax (
    point_id      TEXT PRIMARY KEY REFERENCES snippets(point_id) ON DELETE CASCADE,
    n_ast_errors  INTEGER NOT NULL,
    n_ast_levels  INTEGER NOT NULL,
    n_ast_nodes   INTEGER NOT NULL,
    n_words       INTEGER NOT NULL,
    vocab_size    INTEGER NOT NULL,
    n_whitespaces INTEGER NOT NULL,
    token_count   INTEGER NOT NULL,
    token_ids     TEXT NOT NULL
);
-- dimension 4: software metrics
CREATE TABLE IF NOT EXISTS metrics (
    point_id      TEXT PRIMARY KEY REFERENCES snippets(point_id) ON DELETE CASCADE,
    nloc          INTEGER NOT NULL,
    complexity    INTEGER NOT NULL,
    n_identifiers INTEGER NOT NULL
);
-- dimension 5: vulnerability spans
CREATE TABLE IF NOT EXISTS vuln_spans (
    point_id   TEXT NOT NULL REFERENCES snippets(point_id) ON DELETE CASCADE,
    cwe_id     TEXT NOT NULL,
    rule_id    TEXT NOT NULL,
    start_line INTEGER NOT NULL,
    start_col  INTEGER NOT NULL,
    end_line   INTEGER NOT NULL,
    end_col    INTEGER NOT NULL,
    message    TEXT NOT NULL,
    UNIQUE (point_id, rule_id, start_line, start_col, end_line, end_col)
);
-- dimension 6: mutation ('' testbed = corpus-level)
CREATE TABLE IF NOT EXISTS mutations (
    point_id        TEXT NOT NULL REFERENCES snippets(point_id) ON DELETE CASCADE,
    testbed         TEXT NOT NULL DEFAULT '',
    prefix          TEXT NOT NULL,
    expected_suffix TEXT NOT NULL,
    cut_line        INTEGER NOT NULL,
    seed            INTEGER NOT NULL,
    PRIMARY KEY (point_id, testbed)
);
-- dimension 7: prompt links
CREATE TABLE IF NOT EXISTS prompt_records (
    point_id        TEXT NOT NULL REFERENCES snippets(point_id) ON DELETE CASCADE,
    testbed         TEXT NOT NULL,
    task            TEXT NOT NULL,
    template_ids    TEXT NOT NULL,
    steps           TEXT NOT NULL,
    expected_output TEXT NOT NULL,
    PRIMARY KEY (point_id, testbed, template_ids)
);
-- built testbeds, for resume and re-export
CREATE TABLE IF NOT EXISTS testbeds (
    name          TEXT PRIMARY KEY,
    task          TEXT NOT NULL,
    seed          INTEGER NOT NULL,
    max_size      INTEGER NOT NULL,
    input_count   INTEGER NOT NULL,
    exact_removed INTEGER NOT NULL,
    near_removed  INTEGER NOT NULL,
    threshold     REAL NOT NULL,
    duplicate_pct REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS testbed_points (
    testbed  TEXT NOT NULL,
    ord      INTEGER NOT NULL,
    point_id TEXT NOT NULL,
    PRIMARY KEY (testbed, ord)
);
CREATE TABLE IF NOT EXISTS dedup_reports (
    stage         TEXT PRIMARY KEY,
    input_count   INTEGER NOT NULL,
    exact_removed INTEGER NOT NULL,
    near_removed  INTEGER NOT NULL,
    threshold     REAL NOT NULL,
    duplicate_pct REAL NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_snippets_order ON snippets (committer_date, path, fun_name);
"#;

fn map_sql(e: rusqlite::Error) -> Error {
    if let rusqlite::Error::SqliteFailure(inner, _) = &e {
        if matches!(
            inner.code,
            rusqlite::ErrorCode::DatabaseBusy | rusqlite::ErrorCode::DatabaseLocked
        ) {
            return Error::StoreLocked;
        }
    }
    Error::Sql(e)
}

pub struct Store {
    conn: Connection,
}

impl Store {
    pub fn open(path: &Path) -> Result<Self> {
        let conn = Connection::open(path).map_err(map_sql)?;
        conn.busy_timeout(std::time::Duration::from_secs(5))
            .map_err(map_sql)?;
        conn.execute_batch(SCHEMA).map_err(map_sql)?;
        let found: Option<String> = conn
            .query_row(
                "SELECT value FROM meta WHERE key = 'schema_version'",
                [],
                |r| r.get(0),
            )
            .optional()
            .map_err(map_sql)?;
        match found {
            Some(v) => {
                let found: i64 = v.parse().unwrap_or(-1);
                if found != SCHEMA_VERSION {
                    return Err(Error::SchemaMismatch {
                        found,
                        expected: SCHEMA_VERSION,
                    });
                }
            }
            None => {
                conn.execute(
                    "INSERT INTO meta (key, value) VALUES ('schema_version', ?1)",
                    params![SCHEMA_VERSION.to_string()],
                )
                .map_err(map_sql)?;
            }
        }
        Ok(Store { conn })
    }

    pub fn open_in_memory() -> Result<Self> {
        let conn = Connection::open_in_memory().map_err(map_sql)?;
        conn.execute_batch(SCHEMA).map_err(map_sql)?;
        conn.execute(
            "INSERT INTO meta (key, value) VALUES ('schema_version', ?1)",
            params![SCHEMA_VERSION.to_string()],
        )
        .map_err(map_sql)?;
        Ok(Store { conn })
    }

    /// Idempotent upsert keyed by (commit_id, path, fun_name). Returns the
    /// number of points written.
    pub fn upsert_points(&mut self, points: &[DataPoint]) -> Result<usize> {
        let tx = self.conn.transaction().map_err(map_sql)?;
        for point in points {
            tx.execute(
                "INSERT INTO snippets (point_id, commit_id, repository, path, file_name, fun_name,
                                       commit_message, code, docstring, signature, start_line, committer_date)
                 VALUES (?1,?2,?3,?4,?5,?6,?7,?8,?9,?10,?11,?12)
                 ON CONFLICT (commit_id, path, fun_name) DO UPDATE SET
                     commit_message = excluded.commit_message,
                     code = excluded.code,
                     docstring = excluded.docstring,
                     signature = excluded.signature,
                     start_line = excluded.start_line,
                     committer_date = excluded.committer_date",
                params![
                    point.point_id,
                    point.snippet.commit_id,
                    point.snippet.repository,
                    point.snippet.path,
                    point.snippet.file_name,
                    point.snippet.fun_name,
                    point.snippet.commit_message,
                    point.snippet.code,
                    point.snippet.docstring,
                    point.snippet.signature,
                    point.snippet.start_line,
                    point.snippet.committer_date.to_rfc3339(),
                ],
            )
            .map_err(map_sql)?;
            tx.execute(
                "INSERT OR REPLACE INTO documentation
                 (point_id, n_words, vocab_size, n_whitespaces, language, language_confidence, doc_valid)
                 VALUES (?1,?2,?3,?4,?5,?6,?7)",
                params![
                    point.point_id,
                    point.doc_profile.n_words,
                    point.doc_profile.vocab_size,
                    point.doc_profile.n_whitespaces,
                    point.doc_language.code,
                    point.doc_language.confidence,
                    point.doc_valid,
                ],
            )
            .map_err(map_sql)?;
            tx.execute(
                "INSERT OR REPLACE INTO syntax
                 (point_id, n_ast_errors, n_ast_levels, n_ast_nodes, n_words, vocab_size,
                  n_whitespaces, token_count, token_ids)
                 VALUES (?1,?2,?3,?4,?5,?6,?7,?8,?9)",
                params![
                    point.point_id,
                    point.syntax.n_ast_errors,
                    point.syntax.n_ast_levels,
                    point.syntax.n_ast_nodes,
                    point.code_profile.n_words,
                    point.code_profile.vocab_size,
                    point.code_profile.n_whitespaces,
                    point.token_count,
                    serde_json::to_string(&point.token_ids)?,
                ],
            )
            .map_err(map_sql)?;
            tx.execute(
                "INSERT OR REPLACE INTO metrics (point_id, nloc, complexity, n_identifiers)
                 VALUES (?1,?2,?3,?4)",
                params![
                    point.point_id,
                    point.nloc,
                    point.complexity,
                    point.n_identifiers
                ],
            )
            .map_err(map_sql)?;
            tx.execute(
                "DELETE FROM vuln_spans WHERE point_id = ?1",
                params![point.point_id],
            )
            .map_err(map_sql)?;
            for span in &point.vuln_spans {
                tx.execute(
                    "INSERT OR IGNORE INTO vuln_spans
                     (point_id, cwe_id, rule_id, start_line, start_col, end_line, end_col, message)
                     VALUES (?1,?2,?3,?4,?5,?6,?7,?8)",
                    params![
                        point.point_id,
                        span.cwe_id,
                        span.rule_id,
                        span.start_line,
                        span.start_col,
                        span.end_line,
                        span.end_col,
                        span.message,
                    ],
                )
                .map_err(map_sql)?;
            }
            match &point.mutation {
                Some(cut) => {
                    tx.execute(
                        "INSERT OR REPLACE INTO mutations
                         (point_id, testbed, prefix, expected_suffix, cut_line, seed)
                         VALUES (?1,'',?2,?3,?4,?5)",
                        params![
                            point.point_id,
                            cut.prefix,
                            cut.expected_suffix,
                            cut.cut_line,
                            cut.seed as i64,
                        ],
                    )
                    .map_err(map_sql)?;
                }
                None => {
                    tx.execute(
                        "DELETE FROM mutations WHERE point_id = ?1 AND testbed = ''",
                        params![point.point_id],
                    )
                    .map_err(map_sql)?;
                }
            }
        }
        tx.commit().map_err(map_sql)?;
        Ok(points.len())
    }

    /// Store raw snippets ahead of enrichment; dimension tables are filled by
    /// a later `upsert_points`. Same idempotent natural key.
    pub fn upsert_raw(&mut self, snippets: &[RawSnippet]) -> Result<usize> {
        let tx = self.conn.transaction().map_err(map_sql)?;
        for snippet in snippets {
            let point_id = crate::point_id(&snippet.commit_id, &snippet.path, &snippet.fun_name);
            tx.execute(
                "INSERT INTO snippets (point_id, commit_id, repository, path, file_name, fun_name,
                                       commit_message, code, docstring, signature, start_line, committer_date)
                 VALUES (?1,?2,?3,?4,?5,?6,?7,?8,?9,?10,?11,?12)
                 ON CONFLICT (commit_id, path, fun_name) DO UPDATE SET
                     commit_message = excluded.commit_message,
                     code = excluded.code,
                     docstring = excluded.docstring,
                     signature = excluded.signature,
                     start_line = excluded.start_line,
                     committer_date = excluded.committer_date",
                params![
                    point_id,
                    snippet.commit_id,
                    snippet.repository,
                    snippet.path,
                    snippet.file_name,
                    snippet.fun_name,
                    snippet.commit_message,
                    snippet.code,
                    snippet.docstring,
                    snippet.signature,
                    snippet.start_line,
                    snippet.committer_date.to_rfc3339(),
                ],
            )
            .map_err(map_sql)?;
        }
        tx.commit().map_err(map_sql)?;
        Ok(snippets.len())
    }

    /// Raw snippets that have not been enriched yet, in mining order.
    pub fn load_unenriched(&self) -> Result<Vec<RawSnippet>> {
        let mut stmt = self
            .conn
            .prepare(
                "SELECT s.commit_id, s.repository, s.path, s.file_name, s.fun_name,
                        s.commit_message, s.code, s.docstring, s.signature, s.start_line,
                        s.committer_date
                 FROM snippets s
                 LEFT JOIN documentation d ON d.point_id = s.point_id
                 WHERE d.point_id IS NULL
                 ORDER BY s.committer_date, s.path, s.fun_name",
            )
            .map_err(map_sql)?;
        let snippets = stmt
            .query_map([], |r| {
                let committer_date: String = r.get(10)?;
                Ok(RawSnippet {
                    commit_id: r.get(0)?,
                    repository: r.get(1)?,
                    path: r.get(2)?,
                    file_name: r.get(3)?,
                    fun_name: r.get(4)?,
                    commit_message: r.get(5)?,
                    code: r.get(6)?,
                    docstring: r.get(7)?,
                    signature: r.get(8)?,
                    start_line: r.get(9)?,
                    committer_date: DateTime::parse_from_rfc3339(&committer_date)
                        .map(|d| d.with_timezone(&Utc))
                        .unwrap_or_default(),
                })
            })
            .map_err(map_sql)?
            .collect::<rusqlite::Result<_>>()
            .map_err(map_sql)?;
        Ok(snippets)
    }

    pub fn count_points(&self) -> Result<u64> {
        self.conn
            .query_row("SELECT COUNT(*) FROM snippets", [], |r| r.get::<_, i64>(0))
            .map(|n| n as u64)
            .map_err(map_sql)
    }

    pub fn count_enriched(&self) -> Result<u64> {
        self.conn
            .query_row("SELECT COUNT(*) FROM documentation", [], |r| r.get::<_, i64>(0))
            .map(|n| n as u64)
            .map_err(map_sql)
    }

    pub fn count_kept(&self) -> Result<u64> {
        self.conn
            .query_row(
                "SELECT COUNT(*) FROM snippets s JOIN documentation d ON d.point_id = s.point_id
                 WHERE s.kept = 1",
                [],
                |r| r.get::<_, i64>(0),
            )
            .map(|n| n as u64)
            .map_err(map_sql)
    }

    pub fn count_validated(&self) -> Result<u64> {
        self.conn
            .query_row(
                "SELECT COUNT(*) FROM snippets WHERE kept = 1 AND valid_base = 1",
                [],
                |r| r.get::<_, i64>(0),
            )
            .map(|n| n as u64)
            .map_err(map_sql)
    }

    /// Load points matching a filter, ordered by (commit date, path, fun_name).
    pub fn query_points(&self, filter: &Filter) -> Result<Vec<DataPoint>> {
        let (where_clause, args) = filter.to_sql();
        let sql = format!(
            "SELECT s.point_id FROM snippets s
             JOIN documentation d ON d.point_id = s.point_id
             JOIN syntax y ON y.point_id = s.point_id
             JOIN metrics m ON m.point_id = s.point_id
             {where_clause}
             ORDER BY s.committer_date, s.path, s.fun_name"
        );
        let mut stmt = self.conn.prepare(&sql).map_err(map_sql)?;
        let ids: Vec<String> = stmt
            .query_map(rusqlite::params_from_iter(args.iter()), |r| r.get(0))
            .map_err(map_sql)?
            .collect::<rusqlite::Result<_>>()
            .map_err(map_sql)?;
        ids.iter()
            .map(|id| {
                self.get_point(id)?
                    .ok_or_else(|| Error::BadFilter {
                        reason: format!("dangling point id {id}"),
                    })
            })
            .collect()
    }

    pub fn get_point(&self, point_id: &str) -> Result<Option<DataPoint>> {
        let row = self
            .conn
            .query_row(
                "SELECT s.commit_id, s.repository, s.path, s.file_name, s.fun_name,
                        s.commit_message, s.code, s.docstring, s.signature, s.start_line,
                        s.committer_date,
                        d.n_words, d.vocab_size, d.n_whitespaces, d.language,
                        d.language_confidence, d.doc_valid,
                        y.n_ast_errors, y.n_ast_levels, y.n_ast_nodes, y.n_words,
                        y.vocab_size, y.n_whitespaces, y.token_count, y.token_ids,
                        m.nloc, m.complexity, m.n_identifiers
                 FROM snippets s
                 JOIN documentation d ON d.point_id = s.point_id
                 JOIN syntax y ON y.point_id = s.point_id
                 JOIN metrics m ON m.point_id = s.point_id
                 WHERE s.point_id = ?1",
                params![point_id],
                |r| {
                    let committer_date: String = r.get(10)?;
                    let token_ids: String = r.get(24)?;
                    Ok((
                        RawSnippet {
                            commit_id: r.get(0)?,
                            repository: r.get(1)?,
                            path: r.get(2)?,
                            file_name: r.get(3)?,
                            fun_name: r.get(4)?,
                            commit_message: r.get(5)?,
                            code: r.get(6)?,
                            docstring: r.get(7)?,
                            signature: r.get(8)?,
                            start_line: r.get(9)?,
                            committer_date: DateTime::parse_from_rfc3339(&committer_date)
                                .map(|d| d.with_timezone(&Utc))
                                .unwrap_or_default(),
                        },
                        LexicalProfile {
                            n_words: r.get(11)?,
                            vocab_size: r.get(12)?,
                            n_whitespaces: r.get(13)?,
                        },
                        LanguageTag {
                            code: r.get(14)?,
                            confidence: r.get(15)?,
                        },
                        r.get::<_, bool>(16)?,
                        SyntaxSummary {
                            n_ast_errors: r.get(17)?,
                            n_ast_levels: r.get(18)?,
                            n_ast_nodes: r.get(19)?,
                        },
                        LexicalProfile {
                            n_words: r.get(20)?,
                            vocab_size: r.get(21)?,
                            n_whitespaces: r.get(22)?,
                        },
                        r.get::<_, u32>(23)?,
                        token_ids,
                        r.get::<_, u32>(25)?,
                        r.get::<_, u32>(26)?,
                        r.get::<_, u32>(27)?,
                    ))
                },
            )
            .optional()
            .map_err(map_sql)?;

        let Some((
            snippet,
            doc_profile,
            doc_language,
            doc_valid,
            syntax,
            code_profile,
            token_count,
            token_ids_json,
            nloc,
            complexity,
            n_identifiers,
        )) = row
        else {
            return Ok(None);
        };

        let vuln_spans = self.load_spans(point_id)?;
        let mutation = self.load_mutation(point_id, "")?;
        Ok(Some(DataPoint {
            point_id: point_id.to_string(),
            snippet,
            doc_profile,
            doc_language,
            doc_valid,
            code_profile,
            syntax,
            token_count,
            token_ids: serde_json::from_str(&token_ids_json)?,
            nloc,
            complexity,
            n_identifiers,
            vuln_spans,
            mutation,
        }))
    }

    fn load_spans(&self, point_id: &str) -> Result<Vec<VulnSpan>> {
        let mut stmt = self
            .conn
            .prepare(
                "SELECT cwe_id, rule_id, start_line, start_col, end_line, end_col, message
                 FROM vuln_spans WHERE point_id = ?1
                 ORDER BY start_line, start_col, end_line, end_col, rule_id",
            )
            .map_err(map_sql)?;
        let spans = stmt
            .query_map(params![point_id], |r| {
                Ok(VulnSpan {
                    cwe_id: r.get(0)?,
                    rule_id: r.get(1)?,
                    start_line: r.get(2)?,
                    start_col: r.get(3)?,
                    end_line: r.get(4)?,
                    end_col: r.get(5)?,
                    message: r.get(6)?,
                })
            })
            .map_err(map_sql)?
            .collect::<rusqlite::Result<_>>()
            .map_err(map_sql)?;
        Ok(spans)
    }

    fn load_mutation(&self, point_id: &str, testbed: &str) -> Result<Option<CutPair>> {
        self.conn
            .query_row(
                "SELECT prefix, expected_suffix, cut_line, seed FROM mutations
                 WHERE point_id = ?1 AND testbed = ?2",
                params![point_id, testbed],
                |r| {
                    Ok(CutPair {
                        snippet_id: point_id.to_string(),
                        prefix: r.get(0)?,
                        expected_suffix: r.get(1)?,
                        cut_line: r.get(2)?,
                        seed: r.get::<_, i64>(3)? as u64,
                    })
                },
            )
            .optional()
            .map_err(map_sql)
    }

    pub fn set_kept(&mut self, point_ids: &[String], kept: bool) -> Result<()> {
        let tx = self.conn.transaction().map_err(map_sql)?;
        for id in point_ids {
            tx.execute(
                "UPDATE snippets SET kept = ?1 WHERE point_id = ?2",
                params![kept, id],
            )
            .map_err(map_sql)?;
        }
        tx.commit().map_err(map_sql)
    }

    pub fn set_validation(&mut self, point_id: &str, base: bool, doc: bool) -> Result<()> {
        self.conn
            .execute(
                "UPDATE snippets SET valid_base = ?1, valid_doc = ?2 WHERE point_id = ?3",
                params![base, doc, point_id],
            )
            .map_err(map_sql)?;
        Ok(())
    }

    pub fn save_dedup_report(&mut self, stage: &str, report: &DedupReport) -> Result<()> {
        self.conn
            .execute(
                "INSERT OR REPLACE INTO dedup_reports
                 (stage, input_count, exact_removed, near_removed, threshold, duplicate_pct)
                 VALUES (?1,?2,?3,?4,?5,?6)",
                params![
                    stage,
                    report.input_count as i64,
                    report.exact_removed as i64,
                    report.near_removed as i64,
                    report.threshold,
                    report.duplicate_pct,
                ],
            )
            .map_err(map_sql)?;
        Ok(())
    }

    pub fn load_dedup_report(&self, stage: &str) -> Result<Option<DedupReport>> {
        self.conn
            .query_row(
                "SELECT input_count, exact_removed, near_removed, threshold, duplicate_pct
                 FROM dedup_reports WHERE stage = ?1",
                params![stage],
                |r| {
                    Ok(DedupReport {
                        input_count: r.get::<_, i64>(0)? as u64,
                        exact_removed: r.get::<_, i64>(1)? as u64,
                        near_removed: r.get::<_, i64>(2)? as u64,
                        threshold: r.get(3)?,
                        duplicate_pct: r.get(4)?,
                    })
                },
            )
            .optional()
            .map_err(map_sql)
    }

    /// Persist a built testbed: metadata, member order, and per-member cuts.
    pub fn save_testbed(&mut self, testbed: &Testbed) -> Result<()> {
        let tx = self.conn.transaction().map_err(map_sql)?;
        tx.execute(
            "INSERT OR REPLACE INTO testbeds
             (name, task, seed, max_size, input_count, exact_removed, near_removed,
              threshold, duplicate_pct)
             VALUES (?1,?2,?3,?4,?5,?6,?7,?8,?9)",
            params![
                testbed.name.as_str(),
                testbed.task.as_str(),
                testbed.seed as i64,
                testbed.max_size as i64,
                testbed.report.input_count as i64,
                testbed.report.exact_removed as i64,
                testbed.report.near_removed as i64,
                testbed.report.threshold,
                testbed.report.duplicate_pct,
            ],
        )
        .map_err(map_sql)?;
        tx.execute(
            "DELETE FROM testbed_points WHERE testbed = ?1",
            params![testbed.name.as_str()],
        )
        .map_err(map_sql)?;
        tx.execute(
            "DELETE FROM mutations WHERE testbed = ?1",
            params![testbed.name.as_str()],
        )
        .map_err(map_sql)?;
        for (ord, point) in testbed.points.iter().enumerate() {
            tx.execute(
                "INSERT INTO testbed_points (testbed, ord, point_id) VALUES (?1,?2,?3)",
                params![testbed.name.as_str(), ord as i64, point.point_id],
            )
            .map_err(map_sql)?;
            if let Some(cut) = &point.mutation {
                tx.execute(
                    "INSERT OR REPLACE INTO mutations
                     (point_id, testbed, prefix, expected_suffix, cut_line, seed)
                     VALUES (?1,?2,?3,?4,?5,?6)",
                    params![
                        point.point_id,
                        testbed.name.as_str(),
                        cut.prefix,
                        cut.expected_suffix,
                        cut.cut_line,
                        cut.seed as i64,
                    ],
                )
                .map_err(map_sql)?;
            }
        }
        tx.commit().map_err(map_sql)
    }

    pub fn load_testbed(&self, name: TestbedName) -> Result<Option<Testbed>> {
        let meta = self
            .conn
            .query_row(
                "SELECT task, seed, max_size, input_count, exact_removed, near_removed,
                        threshold, duplicate_pct
                 FROM testbeds WHERE name = ?1",
                params![name.as_str()],
                |r| {
                    Ok((
                        r.get::<_, String>(0)?,
                        r.get::<_, i64>(1)? as u64,
                        r.get::<_, i64>(2)? as usize,
                        DedupReport {
                            input_count: r.get::<_, i64>(3)? as u64,
                            exact_removed: r.get::<_, i64>(4)? as u64,
                            near_removed: r.get::<_, i64>(5)? as u64,
                            threshold: r.get(6)?,
                            duplicate_pct: r.get(7)?,
                        },
                    ))
                },
            )
            .optional()
            .map_err(map_sql)?;
        let Some((task, seed, max_size, report)) = meta else {
            return Ok(None);
        };

        let mut stmt = self
            .conn
            .prepare("SELECT point_id FROM testbed_points WHERE testbed = ?1 ORDER BY ord")
            .map_err(map_sql)?;
        let ids: Vec<String> = stmt
            .query_map(params![name.as_str()], |r| r.get(0))
            .map_err(map_sql)?
            .collect::<rusqlite::Result<_>>()
            .map_err(map_sql)?;

        let mut points = Vec::with_capacity(ids.len());
        for id in &ids {
            let mut point = self.get_point(id)?.ok_or_else(|| Error::BadFilter {
                reason: format!("testbed {name} references missing point {id}"),
            })?;
            point.mutation = self.load_mutation(id, name.as_str())?;
            points.push(point);
        }

        let task = match task.as_str() {
            "code_completion" => SeTask::CodeCompletion,
            "code_generation" => SeTask::CodeGeneration,
            "commit_generation" => SeTask::CommitGeneration,
            "code_summarization" => SeTask::CodeSummarization,
            _ => SeTask::VulnerabilityDetection,
        };
        Ok(Some(Testbed {
            name,
            task,
            points,
            report,
            seed,
            max_size,
        }))
    }

    pub fn upsert_prompts(&mut self, testbed: TestbedName, records: &[PromptRecord]) -> Result<usize> {
        let tx = self.conn.transaction().map_err(map_sql)?;
        for record in records {
            tx.execute(
                "INSERT OR REPLACE INTO prompt_records
                 (point_id, testbed, task, template_ids, steps, expected_output)
                 VALUES (?1,?2,?3,?4,?5,?6)",
                params![
                    record.point_id,
                    testbed.as_str(),
                    record.task.as_str(),
                    record.template_ids.join("+"),
                    serde_json::to_string(&record.steps)?,
                    record.expected_output,
                ],
            )
            .map_err(map_sql)?;
        }
        tx.commit().map_err(map_sql)?;
        Ok(records.len())
    }

    pub fn load_prompts(&self, testbed: TestbedName) -> Result<Vec<PromptRecord>> {
        let mut stmt = self
            .conn
            .prepare(
                "SELECT p.point_id, p.task, p.template_ids, p.steps, p.expected_output
                 FROM prompt_records p
                 JOIN snippets s ON s.point_id = p.point_id
                 WHERE p.testbed = ?1
                 ORDER BY s.committer_date, s.path, s.fun_name, p.template_ids",
            )
            .map_err(map_sql)?;
        let rows = stmt
            .query_map(params![testbed.as_str()], |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, String>(3)?,
                    r.get::<_, String>(4)?,
                ))
            })
            .map_err(map_sql)?
            .collect::<rusqlite::Result<Vec<_>>>()
            .map_err(map_sql)?;
        rows.into_iter()
            .map(|(point_id, task, template_ids, steps, expected_output)| {
                Ok(PromptRecord {
                    point_id,
                    task: match task.as_str() {
                        "code_completion" => SeTask::CodeCompletion,
                        "code_generation" => SeTask::CodeGeneration,
                        "commit_generation" => SeTask::CommitGeneration,
                        "code_summarization" => SeTask::CodeSummarization,
                        _ => SeTask::VulnerabilityDetection,
                    },
                    template_ids: template_ids.split('+').map(String::from).collect(),
                    steps: serde_json::from_str(&steps)?,
                    expected_output,
                })
            })
            .collect()
    }

    pub fn meta(&self, key: &str) -> Result<Option<String>> {
        self.conn
            .query_row("SELECT value FROM meta WHERE key = ?1", params![key], |r| {
                r.get(0)
            })
            .optional()
            .map_err(map_sql)
    }

    pub fn set_meta(&mut self, key: &str, value: &str) -> Result<()> {
        self.conn
            .execute(
                "INSERT OR REPLACE INTO meta (key, value) VALUES (?1, ?2)",
                params![key, value],
            )
            .map_err(map_sql)?;
        Ok(())
    }
}

/// A conjunction of comparisons over indexed fields. Parsed from expressions
/// like `doc_n_words > 10 AND token_count <= 50 AND language = en`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Filter {
    clauses: Vec<(FilterField, FilterOp, String)>,
    /// Restrict to points flagged kept by curation.
    pub kept_only: bool,
    /// Restrict to points that passed base validation.
    pub valid_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterField {
    DocNWords,
    TokenCount,
    HasVuln,
    Language,
    Date,
    Nloc,
    Complexity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl FilterOp {
    fn sql(&self) -> &'static str {
        match self {
            FilterOp::Lt => "<",
            FilterOp::Le => "<=",
            FilterOp::Gt => ">",
            FilterOp::Ge => ">=",
            FilterOp::Eq => "=",
            FilterOp::Ne => "!=",
        }
    }
}

impl Filter {
    pub fn all() -> Self {
        Filter::default()
    }

    pub fn kept() -> Self {
        Filter {
            kept_only: true,
            ..Filter::default()
        }
    }

    pub fn push(&mut self, field: FilterField, op: FilterOp, value: impl Into<String>) {
        self.clauses.push((field, op, value.into()));
    }

    fn to_sql(&self) -> (String, Vec<String>) {
        let mut conds = Vec::new();
        let mut args = Vec::new();
        if self.kept_only {
            conds.push("s.kept = 1".to_string());
        }
        if self.valid_only {
            conds.push("s.valid_base = 1".to_string());
        }
        for (field, op, value) in &self.clauses {
            let n = args.len() + 1;
            let cond = match field {
                FilterField::DocNWords => format!("d.n_words {} CAST(?{n} AS INTEGER)", op.sql()),
                FilterField::TokenCount => {
                    format!("y.token_count {} CAST(?{n} AS INTEGER)", op.sql())
                }
                FilterField::HasVuln => {
                    let exists =
                        "EXISTS (SELECT 1 FROM vuln_spans v WHERE v.point_id = s.point_id)";
                    let want = value == "true" || value == "1";
                    let positive = matches!(op, FilterOp::Eq) == want;
                    if positive {
                        exists.to_string()
                    } else {
                        format!("NOT {exists}")
                    }
                }
                FilterField::Language => format!("d.language {} ?{n}", op.sql()),
                FilterField::Date => format!("s.committer_date {} ?{n}", op.sql()),
                FilterField::Nloc => format!("m.nloc {} CAST(?{n} AS INTEGER)", op.sql()),
                FilterField::Complexity => {
                    format!("m.complexity {} CAST(?{n} AS INTEGER)", op.sql())
                }
            };
            if !matches!(field, FilterField::HasVuln) {
                args.push(value.clone());
            }
            conds.push(cond);
        }
        if conds.is_empty() {
            (String::new(), args)
        } else {
            (format!("WHERE {}", conds.join(" AND ")), args)
        }
    }
}

impl FromStr for Filter {
    type Err = Error;

    fn from_str(expr: &str) -> Result<Self> {
        let mut filter = Filter::default();
        let expr = expr.trim();
        if expr.is_empty() {
            return Ok(filter);
        }
        for clause in expr.split(" AND ").flat_map(|c| c.split(" and ")) {
            let clause = clause.trim();
            if clause.is_empty() {
                continue;
            }
            let (field_raw, op, value) = split_clause(clause)?;
            let field = match field_raw {
                "doc_n_words" => FilterField::DocNWords,
                "token_count" => FilterField::TokenCount,
                "has_vuln" => FilterField::HasVuln,
                "language" => FilterField::Language,
                "date" | "committer_date" => FilterField::Date,
                "nloc" => FilterField::Nloc,
                "complexity" => FilterField::Complexity,
                other => {
                    return Err(Error::BadFilter {
                        reason: format!("unknown field {other:?}"),
                    })
                }
            };
            if matches!(
                field,
                FilterField::DocNWords
                    | FilterField::TokenCount
                    | FilterField::Nloc
                    | FilterField::Complexity
            ) && value.parse::<i64>().is_err()
            {
                return Err(Error::BadFilter {
                    reason: format!("{field_raw} needs an integer, got {value:?}"),
                });
            }
            if matches!(field, FilterField::HasVuln) && !matches!(value, "true" | "false") {
                return Err(Error::BadFilter {
                    reason: format!("has_vuln needs true/false, got {value:?}"),
                });
            }
            filter.push(field, op, value);
        }
        Ok(filter)
    }
}

fn split_clause(clause: &str) -> Result<(&str, FilterOp, &str)> {
    for (text, op) in [
        ("<=", FilterOp::Le),
        (">=", FilterOp::Ge),
        ("!=", FilterOp::Ne),
        ("<", FilterOp::Lt),
        (">", FilterOp::Gt),
        ("=", FilterOp::Eq),
    ] {
        if let Some((lhs, rhs)) = clause.split_once(text) {
            let field = lhs.trim();
            let value = rhs.trim();
            if field.is_empty() || value.is_empty() {
                return Err(Error::BadFilter {
                    reason: format!("clause {clause:?} is missing a side"),
                });
            }
            return Ok((field, op, value));
        }
    }
    Err(Error::BadFilter {
        reason: format!("clause {clause:?} has no comparison operator"),
    })
}

/// Write records as JSONL: one record per line, UTF-8, stable key order.
pub fn export_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a JSONL file back into records.
pub fn import_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(Error::Json))
        .collect()
}
