//! Commit enumeration inside the contamination-safe time window and
//! extraction of newly added methods from each commit's diff.
//!
//! A method is "new" iff its qualified name appears in the after version of a
//! file and not in the before version; a file addition makes all its methods
//! new. Windowing is driven by committer date, which reflects when code
//! entered the public history.

use crate::discovery::LocalRepo;
use crate::error::{Error, Result};
use crate::pysrc;
use chrono::{DateTime, NaiveDate, TimeZone, Utc};
use git2::{Commit, Repository};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

/// Inclusive UTC date window for commit selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl TimeWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidConfig(format!(
                "window start {start} is after end {end}"
            )));
        }
        Ok(TimeWindow { start, end })
    }

    pub fn contains(&self, ts: DateTime<Utc>) -> bool {
        let date = ts.date_naive();
        self.start <= date && date <= self.end
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl FromStr for TimeWindow {
    type Err = Error;

    /// Parses `YYYY-MM-DD..YYYY-MM-DD`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| Error::InvalidConfig(format!("window {s:?} is not start..end")))?;
        let parse = |d: &str| {
            NaiveDate::parse_from_str(d, "%Y-%m-%d")
                .map_err(|e| Error::InvalidConfig(format!("bad date {d:?}: {e}")))
        };
        TimeWindow::new(parse(a)?, parse(b)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitMeta {
    pub commit_id: String,
    pub author_date: DateTime<Utc>,
    pub committer_date: DateTime<Utc>,
    pub message: String,
    pub changed_files: Vec<String>,
}

/// A newly added method extracted from a commit, with identification fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSnippet {
    pub commit_id: String,
    pub repository: String,
    pub path: String,
    pub file_name: String,
    /// Qualified method name, module-relative dotted path.
    pub fun_name: String,
    pub commit_message: String,
    /// Full method source, signature through body, verbatim from the file.
    pub code: String,
    pub docstring: Option<String>,
    /// First logical line of the definition.
    pub signature: String,
    /// 1-based line of the signature in the after version of the file.
    pub start_line: u32,
    pub committer_date: DateTime<Utc>,
}

fn git_time_to_utc(time: git2::Time) -> DateTime<Utc> {
    Utc.timestamp_opt(time.seconds(), 0)
        .single()
        .unwrap_or_else(|| Utc.timestamp_opt(0, 0).single().expect("epoch is valid"))
}

fn open_repo(repo: &LocalRepo) -> Result<Repository> {
    Repository::open(&repo.workdir).map_err(|e| Error::RepoUnreadable {
        path: repo.workdir.clone(),
        reason: e.to_string(),
    })
}

/// All non-merge commits reachable from the default branch whose committer
/// date falls inside the window, oldest first.
pub fn list_window_commits(repo: &LocalRepo, window: TimeWindow) -> Result<Vec<CommitMeta>> {
    let git = open_repo(repo)?;
    let mut walk = git.revwalk()?;
    walk.push_head()?;

    let mut commits = Vec::new();
    for oid in walk {
        let oid = oid?;
        let commit = git.find_commit(oid)?;
        if commit.parent_count() > 1 {
            continue;
        }
        let committer_date = git_time_to_utc(commit.committer().when());
        if !window.contains(committer_date) {
            continue;
        }
        commits.push(CommitMeta {
            commit_id: oid.to_string(),
            author_date: git_time_to_utc(commit.author().when()),
            committer_date,
            message: commit.message().unwrap_or("").to_string(),
            changed_files: changed_files(&git, &commit)?,
        });
    }
    commits.sort_by(|a, b| {
        a.committer_date
            .cmp(&b.committer_date)
            .then_with(|| a.commit_id.cmp(&b.commit_id))
    });
    Ok(commits)
}

fn changed_files(git: &Repository, commit: &Commit) -> Result<Vec<String>> {
    let tree = commit.tree()?;
    let parent_tree = match commit.parent(0) {
        Ok(parent) => Some(parent.tree()?),
        Err(_) => None,
    };
    let diff = git.diff_tree_to_tree(parent_tree.as_ref(), Some(&tree), None)?;
    let mut files = Vec::new();
    diff.foreach(
        &mut |delta, _| {
            if let Some(path) = delta.new_file().path().or_else(|| delta.old_file().path()) {
                files.push(path.to_string_lossy().to_string());
            }
            true
        },
        None,
        None,
        None,
    )?;
    files.sort();
    files.dedup();
    Ok(files)
}

fn blob_text(git: &Repository, commit: &Commit, path: &str) -> Option<Vec<u8>> {
    let tree = commit.tree().ok()?;
    let entry = tree.get_path(std::path::Path::new(path)).ok()?;
    let object = entry.to_object(git).ok()?;
    let blob = object.as_blob()?;
    Some(blob.content().to_vec())
}

/// Newly added methods in one commit, plus the count of file versions that
/// were skipped as unreadable (binary or non-UTF-8).
pub fn extract_new_methods(
    repo: &LocalRepo,
    commit: &CommitMeta,
) -> Result<(Vec<RawSnippet>, u32)> {
    let git = open_repo(repo)?;
    let oid = git2::Oid::from_str(&commit.commit_id)?;
    let git_commit = git.find_commit(oid)?;
    let parent = git_commit.parent(0).ok();

    let mut snippets = Vec::new();
    let mut skipped_files = 0u32;

    for path in &commit.changed_files {
        if !path.ends_with(".py") {
            continue;
        }
        let after_bytes = match blob_text(&git, &git_commit, path) {
            Some(bytes) => bytes,
            None => continue, // deleted in this commit
        };
        let after = match String::from_utf8(after_bytes) {
            Ok(text) => text,
            Err(_) => {
                log::warn!("skipping non-UTF-8 file {path} at {}", commit.commit_id);
                skipped_files += 1;
                continue;
            }
        };
        let before_names: HashSet<String> = match parent
            .as_ref()
            .and_then(|p| blob_text(&git, p, path))
        {
            Some(bytes) => match String::from_utf8(bytes) {
                Ok(text) => pysrc::list_methods(&text)
                    .into_iter()
                    .map(|m| m.qualified_name)
                    .collect(),
                Err(_) => {
                    log::warn!(
                        "skipping file {path}: non-UTF-8 before version at {}",
                        commit.commit_id
                    );
                    skipped_files += 1;
                    continue;
                }
            },
            None => HashSet::new(), // file added in this commit
        };

        let file_name = std::path::Path::new(path)
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| path.clone());

        for method in pysrc::list_methods(&after) {
            if before_names.contains(&method.qualified_name) {
                continue;
            }
            snippets.push(RawSnippet {
                commit_id: commit.commit_id.clone(),
                repository: repo.full_name.clone(),
                path: path.clone(),
                file_name: file_name.clone(),
                fun_name: method.qualified_name,
                commit_message: commit.message.clone(),
                code: method.code,
                docstring: method.docstring,
                signature: method.signature,
                start_line: method.start_line,
                committer_date: commit.committer_date,
            });
        }
    }
    Ok((snippets, skipped_files))
}

/// Convenience: mine every in-window commit of a repository.
pub fn mine_repository(repo: &LocalRepo, window: TimeWindow) -> Result<(Vec<RawSnippet>, u32)> {
    let mut all = Vec::new();
    let mut skipped = 0;
    for commit in list_window_commits(repo, window)? {
        let (snippets, files_skipped) = extract_new_methods(repo, &commit)?;
        all.extend(snippets);
        skipped += files_skipped;
    }
    Ok((all, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_rejects_reversed_dates() {
        let start = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
        let end = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        assert!(TimeWindow::new(start, end).is_err());
    }

    #[test]
    fn window_parses_and_contains_inclusive_bounds() {
        let w: TimeWindow = "2022-01-01..2023-01-01".parse().unwrap();
        let start_of = |y, m, d, h| Utc.with_ymd_and_hms(y, m, d, h, 0, 0).unwrap();
        assert!(w.contains(start_of(2022, 1, 1, 0)));
        assert!(w.contains(start_of(2023, 1, 1, 23)));
        assert!(!w.contains(start_of(2021, 12, 31, 23)));
        assert!(!w.contains(start_of(2023, 1, 2, 0)));
    }

    #[test]
    fn window_roundtrips_through_display() {
        let w: TimeWindow = "2022-01-01..2023-01-01".parse().unwrap();
        assert_eq!(w.to_string().parse::<TimeWindow>().unwrap(), w);
    }
}
