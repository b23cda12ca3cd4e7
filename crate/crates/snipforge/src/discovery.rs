//! Host search queries, repository search over the code-host REST API, and
//! local clone materialization.
//!
//! Host results are never trusted as-is: every returned ref is re-checked
//! against the query clauses client-side, because the host index lags.

use crate::error::{Error, Result};
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Duration;

/// Environment variable holding the API token. Read once, never persisted.
pub const TOKEN_ENV_VAR: &str = "SNIPFORGE_GITHUB_TOKEN";

/// Results-per-page and page cap of the GitHub-compatible search endpoint.
const PER_PAGE: u32 = 100;
const HOST_PAGE_CAP: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoQuery {
    pub language: String,
    pub fork_allowed: bool,
    pub min_size_kb: u64,
    pub pushed_after: NaiveDate,
    pub min_stars: u64,
    pub max_results: u32,
}

impl Default for RepoQuery {
    fn default() -> Self {
        RepoQuery {
            language: "Python".to_string(),
            fork_allowed: false,
            min_size_kb: 30_000,
            pushed_after: NaiveDate::from_ymd_opt(2021, 12, 31).expect("valid date"),
            min_stars: 1_000,
            max_results: 200,
        }
    }
}

impl RepoQuery {
    pub fn validate(&self) -> Result<()> {
        if self.language.is_empty() {
            return Err(Error::InvalidConfig("query language is empty".into()));
        }
        if self.max_results == 0 {
            return Err(Error::InvalidConfig("max_results must be positive".into()));
        }
        Ok(())
    }
}

/// Serialize the query to the host search syntax. Clause order is fixed:
/// language, fork, size, pushed, stars.
pub fn build_search_query(config: &RepoQuery) -> String {
    format!(
        "language:{} fork:{} size:>={} pushed:>{} stars:>{}",
        config.language,
        config.fork_allowed,
        config.min_size_kb,
        config.pushed_after.format("%Y-%m-%d"),
        config.min_stars,
    )
}

/// Inverse of [`build_search_query`]. `max_results` is a client-side cap that
/// does not appear in the query string, so the caller supplies it.
pub fn parse_search_query(query: &str, max_results: u32) -> Result<RepoQuery> {
    let bad = |why: &str| Error::InvalidConfig(format!("unparseable query {query:?}: {why}"));
    let mut language = None;
    let mut fork_allowed = None;
    let mut min_size_kb = None;
    let mut pushed_after = None;
    let mut min_stars = None;
    for clause in query.split_whitespace() {
        let (key, value) = clause
            .split_once(':')
            .ok_or_else(|| bad("clause without colon"))?;
        match key {
            "language" => language = Some(value.to_string()),
            "fork" => {
                fork_allowed = Some(match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(bad("fork clause is not a boolean")),
                })
            }
            "size" => {
                let raw = value
                    .strip_prefix(">=")
                    .ok_or_else(|| bad("size clause is not >=N"))?;
                min_size_kb = Some(raw.parse().map_err(|_| bad("size is not an integer"))?);
            }
            "pushed" => {
                let raw = value
                    .strip_prefix('>')
                    .ok_or_else(|| bad("pushed clause is not >date"))?;
                pushed_after = Some(
                    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
                        .map_err(|_| bad("pushed date is not ISO-8601"))?,
                );
            }
            "stars" => {
                let raw = value
                    .strip_prefix('>')
                    .ok_or_else(|| bad("stars clause is not >N"))?;
                min_stars = Some(raw.parse().map_err(|_| bad("stars is not an integer"))?);
            }
            other => return Err(bad(&format!("unknown clause {other}"))),
        }
    }
    Ok(RepoQuery {
        language: language.ok_or_else(|| bad("missing language"))?,
        fork_allowed: fork_allowed.ok_or_else(|| bad("missing fork"))?,
        min_size_kb: min_size_kb.ok_or_else(|| bad("missing size"))?,
        pushed_after: pushed_after.ok_or_else(|| bad("missing pushed"))?,
        min_stars: min_stars.ok_or_else(|| bad("missing stars"))?,
        max_results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoRef {
    /// `owner/name`, exactly one separator.
    pub full_name: String,
    pub clone_url: String,
    pub stars: u64,
    pub size_kb: u64,
    pub default_branch: String,
    pub pushed_at: DateTime<Utc>,
}

impl RepoRef {
    /// Client-side re-check of every query clause. `fork` comes from the raw
    /// host record because the ref does not carry it.
    fn satisfies(&self, q: &RepoQuery, is_fork: bool, language: Option<&str>) -> bool {
        self.full_name.matches('/').count() == 1
            && (q.fork_allowed || !is_fork)
            && language.is_none_or(|l| l.eq_ignore_ascii_case(&q.language))
            && self.size_kb >= q.min_size_kb
            && self.pushed_at.date_naive() > q.pushed_after
            && self.stars > q.min_stars
    }
}

#[derive(Debug, Clone)]
pub struct LocalRepo {
    pub full_name: String,
    pub workdir: PathBuf,
    pub head_commit: String,
}

#[derive(Debug, Deserialize)]
struct SearchResponse {
    items: Vec<SearchItem>,
}

#[derive(Debug, Deserialize)]
struct SearchItem {
    full_name: String,
    clone_url: String,
    stargazers_count: u64,
    size: u64,
    default_branch: String,
    pushed_at: DateTime<Utc>,
    #[serde(default)]
    fork: bool,
    #[serde(default)]
    language: Option<String>,
}

pub struct SearchClient {
    http: reqwest::blocking::Client,
    base_url: String,
    token: Option<String>,
    max_retries: u32,
}

impl SearchClient {
    pub fn new(base_url: impl Into<String>, token: Option<String>) -> Self {
        let http = reqwest::blocking::Client::builder()
            .user_agent(concat!("snipforge/", env!("CARGO_PKG_VERSION")))
            .timeout(Duration::from_secs(30))
            .build()
            .expect("static client config");
        SearchClient {
            http,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token,
            max_retries: 2,
        }
    }

    pub fn github(token: Option<String>) -> Self {
        Self::new("https://api.github.com", token)
    }

    /// Fetch refs matching the query, sorted by stars descending, paginating
    /// until `page_limit`, `max_results`, or exhaustion. When the host's
    /// result cap binds, continue past it by paging star buckets downward.
    pub fn search_repositories(
        &self,
        config: &RepoQuery,
        page_limit: u32,
    ) -> Result<Vec<RepoRef>> {
        config.validate()?;
        if self.token.is_none() {
            return Err(Error::AuthMissing {
                request: format!("{}/search/repositories", self.base_url),
            });
        }

        let mut refs: Vec<RepoRef> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        // None = open-ended stars:>min clause; Some(u) = stars bucket (min, u].
        let mut stars_upper: Option<u64> = None;

        'buckets: loop {
            let query = match stars_upper {
                None => build_search_query(config),
                Some(upper) => format!(
                    "language:{} fork:{} size:>={} pushed:>{} stars:{}..{}",
                    config.language,
                    config.fork_allowed,
                    config.min_size_kb,
                    config.pushed_after.format("%Y-%m-%d"),
                    config.min_stars + 1,
                    upper,
                ),
            };
            // Page until an empty page, the host cap, or the caller's limit.
            // Short non-empty pages keep going: some hosts return fewer than
            // per_page items per page.
            let pages_this_bucket = HOST_PAGE_CAP.min(page_limit);
            let mut bucket_hit_cap = true;
            for page in 1..=pages_this_bucket {
                let items = self.fetch_page(&query, page)?;
                if items.is_empty() {
                    bucket_hit_cap = false;
                    break;
                }
                for item in items {
                    let repo_ref = RepoRef {
                        full_name: item.full_name.clone(),
                        clone_url: item.clone_url,
                        stars: item.stargazers_count,
                        size_kb: item.size,
                        default_branch: item.default_branch,
                        pushed_at: item.pushed_at,
                    };
                    if !repo_ref.satisfies(config, item.fork, item.language.as_deref()) {
                        log::warn!(
                            "dropping {} returned by host but violating the query",
                            repo_ref.full_name
                        );
                        continue;
                    }
                    if seen.insert(repo_ref.full_name.clone()) {
                        refs.push(repo_ref);
                    }
                }
                if refs.len() as u32 >= config.max_results {
                    break 'buckets;
                }
            }
            // A bucket that ended before the host cap is exhausted: done.
            if !bucket_hit_cap {
                break;
            }
            // The cap bound: continue below the weakest star count seen.
            let Some(min_seen) = refs.iter().map(|r| r.stars).min() else {
                break;
            };
            if min_seen <= config.min_stars + 1 {
                break;
            }
            let next_upper = min_seen - 1;
            if stars_upper.is_some_and(|u| next_upper >= u) {
                log::warn!("star bucket did not shrink at {next_upper}; stopping pagination");
                break;
            }
            stars_upper = Some(next_upper);
        }

        refs.sort_by(|a, b| b.stars.cmp(&a.stars).then(a.full_name.cmp(&b.full_name)));
        refs.truncate(config.max_results as usize);
        Ok(refs)
    }

    fn fetch_page(&self, query: &str, page: u32) -> Result<Vec<SearchItem>> {
        let url = format!("{}/search/repositories", self.base_url);
        let request_desc = format!("{url}?q={query}&page={page}");
        let mut attempt = 0;
        loop {
            let mut req = self
                .http
                .get(&url)
                .query(&[("q", query)])
                .query(&[("sort", "stars"), ("order", "desc")])
                .query(&[("page", page.to_string()), ("per_page", PER_PAGE.to_string())])
                .header("Accept", "application/vnd.github+json");
            if let Some(token) = &self.token {
                req = req.bearer_auth(token);
            }
            let response = req.send().map_err(|e| Error::HostUnreachable {
                request: request_desc.clone(),
                source: e,
            })?;

            let status = response.status();
            if status == reqwest::StatusCode::UNAUTHORIZED {
                return Err(Error::AuthMissing {
                    request: request_desc,
                });
            }
            if status == reqwest::StatusCode::FORBIDDEN
                || status == reqwest::StatusCode::TOO_MANY_REQUESTS
            {
                if attempt >= self.max_retries {
                    return Err(Error::RateLimited {
                        request: request_desc,
                        retries: attempt,
                    });
                }
                let wait = retry_after_seconds(&response).unwrap_or(1);
                log::warn!("rate limited on {request_desc}; retrying in {wait}s");
                std::thread::sleep(Duration::from_secs(wait));
                attempt += 1;
                continue;
            }
            if !status.is_success() {
                return Err(Error::CloneFailed {
                    url: request_desc,
                    reason: format!("unexpected search status {status}"),
                });
            }
            let parsed: SearchResponse =
                response.json().map_err(|e| Error::HostUnreachable {
                    request: request_desc.clone(),
                    source: e,
                })?;
            return Ok(parsed.items);
        }
    }
}

fn retry_after_seconds(response: &reqwest::blocking::Response) -> Option<u64> {
    response
        .headers()
        .get("retry-after")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok())
}

/// Clone a repository into the cache with full history, or fetch if already
/// present. Idempotent: repeated calls yield the same HEAD for an unchanged
/// remote.
pub fn materialize_repository(repo_ref: &RepoRef, cache_dir: &Path) -> Result<LocalRepo> {
    let workdir = cache_dir.join(repo_ref.full_name.replace('/', "__"));
    let repo = if workdir.exists() {
        let existing = git2::Repository::open(&workdir).map_err(|e| Error::CorruptCache {
            path: workdir.clone(),
            reason: e.to_string(),
        })?;
        {
            let mut remote = existing.find_remote("origin").map_err(|e| Error::CorruptCache {
                path: workdir.clone(),
                reason: format!("no origin remote: {e}"),
            })?;
            remote
                .fetch(&[] as &[&str], None, None)
                .map_err(|e| Error::CloneFailed {
                    url: repo_ref.clone_url.clone(),
                    reason: format!("fetch failed: {e}"),
                })?;
        }
        existing
    } else {
        std::fs::create_dir_all(cache_dir).map_err(|e| Error::CloneFailed {
            url: repo_ref.clone_url.clone(),
            reason: format!("cannot create cache dir: {e}"),
        })?;
        // Full history on purpose: commit windowing needs dates.
        git2::Repository::clone(&repo_ref.clone_url, &workdir).map_err(|e| {
            Error::CloneFailed {
                url: repo_ref.clone_url.clone(),
                reason: e.to_string(),
            }
        })?
    };

    let head_commit = repo
        .head()
        .and_then(|h| h.peel_to_commit())
        .map_err(|e| Error::RepoUnreadable {
            path: workdir.clone(),
            reason: format!("no HEAD commit: {e}"),
        })?
        .id()
        .to_string();

    Ok(LocalRepo {
        full_name: repo_ref.full_name.clone(),
        workdir,
        head_commit,
    })
}

/// Treat an already-cloned working directory (or a plain local path) as a
/// repository, without touching the network.
pub fn open_local(path: &Path, full_name: &str) -> Result<LocalRepo> {
    let repo = git2::Repository::open(path).map_err(|e| Error::RepoUnreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let head_commit = repo
        .head()
        .and_then(|h| h.peel_to_commit())
        .map_err(|e| Error::RepoUnreadable {
            path: path.to_path_buf(),
            reason: format!("no HEAD commit: {e}"),
        })?
        .id()
        .to_string();
    Ok(LocalRepo {
        full_name: full_name.to_string(),
        workdir: path.to_path_buf(),
        head_commit,
    })
}
