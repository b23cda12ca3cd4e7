//! Shared fixtures for integration tests: a scripted git repository with
//! commits on both sides of the mining window, a deterministic tokenizer
//! model, and a minimal in-process HTTP host for search tests.

#![allow(dead_code)]

use chrono::{NaiveDate, TimeZone, Utc};
use git2::{Repository, Signature, Time};
use snipforge::features::{DataPoint, Enricher};
use snipforge::langdetect::LanguageDetector;
use snipforge::mining::RawSnippet;
use snipforge::tokenizer::{map_bytes, model_json, BpeTokenizer};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

// ---------------------------------------------------------------------------
// tokenizer fixture
// ---------------------------------------------------------------------------

/// Common Python substrings merged into multi-byte tokens so that token-id
/// sets discriminate between methods.
const MERGE_WORDS: &[&str] = &[
    "def ", "return ", "self", "import", "print", "range", "value", "result",
    "data", "None", "True", "False", "if ", "else", "for ", "while ", "in ",
    "not ", "and ", "or ", "url", "key", "sum", "mean", "class", "raise",
    "total", "cache", "item", "count", "async", "await", "yield", "stats",
    "    ",
];

/// Deterministic byte-level BPE model JSON with cumulative merges for the
/// words above.
pub fn tokenizer_model_json() -> String {
    let mut merges: Vec<(String, String)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for word in MERGE_WORDS {
        let mapped = map_bytes(word);
        let chars: Vec<String> = mapped.chars().map(|c| c.to_string()).collect();
        let mut acc = chars[0].clone();
        for next in &chars[1..] {
            let pair = (acc.clone(), next.clone());
            if seen.insert(pair.clone()) {
                merges.push(pair);
            }
            acc.push_str(next);
        }
    }
    let pairs: Vec<(&str, &str)> = merges
        .iter()
        .map(|(a, b)| (a.as_str(), b.as_str()))
        .collect();
    model_json(&pairs)
}

pub fn write_tokenizer_model(dir: &Path) -> PathBuf {
    let path = dir.join("tokenizer.json");
    std::fs::write(&path, tokenizer_model_json()).unwrap();
    path
}

pub fn fixture_tokenizer() -> BpeTokenizer {
    BpeTokenizer::from_json(&tokenizer_model_json()).unwrap()
}

// ---------------------------------------------------------------------------
// enrichment helpers
// ---------------------------------------------------------------------------

/// Detector with fixed output, for tests that must not depend on the real
/// trigram model.
pub struct FixedDetector(pub Vec<(String, f64)>);

impl LanguageDetector for FixedDetector {
    fn detect(&self, _text: &str) -> Vec<(String, f64)> {
        self.0.clone()
    }
    fn name(&self) -> &str {
        "fixed"
    }
}

pub fn snippet_from_code(code: &str, fun_name: &str, commit_id: &str) -> RawSnippet {
    let docstring = snipforge::pysrc::extract_docstring(code);
    let signature = snipforge::pysrc::list_methods(code)
        .first()
        .map(|m| m.signature.clone())
        .unwrap_or_else(|| code.lines().next().unwrap_or("").to_string());
    RawSnippet {
        commit_id: commit_id.to_string(),
        repository: "fixture/repo".into(),
        path: "src/mod.py".into(),
        file_name: "mod.py".into(),
        fun_name: fun_name.to_string(),
        commit_message: "add fixture method".into(),
        code: code.to_string(),
        docstring,
        signature,
        start_line: 1,
        committer_date: Utc.with_ymd_and_hms(2022, 6, 1, 12, 0, 0).unwrap(),
    }
}

/// Enrich a code snippet with the fixture tokenizer and a detector that
/// reports confident English.
pub fn enrich_code(code: &str, fun_name: &str, commit_id: &str) -> DataPoint {
    let tokenizer = fixture_tokenizer();
    let detector = FixedDetector(vec![("en".into(), 0.99)]);
    let enricher = Enricher {
        tokenizer: &tokenizer,
        detector: &detector,
        doc_min_words: 3,
        language_threshold: 0.9,
    };
    enricher
        .enrich(snippet_from_code(code, fun_name, commit_id))
        .unwrap()
}

// ---------------------------------------------------------------------------
// git fixture repository
// ---------------------------------------------------------------------------

pub struct FixtureCommit {
    pub message: &'static str,
    pub date: NaiveDate,
    /// (path, content) pairs written (or overwritten) by this commit.
    pub files: Vec<(&'static str, String)>,
}

fn signature_at(date: NaiveDate) -> Signature<'static> {
    let ts = date.and_hms_opt(12, 0, 0).unwrap().and_utc().timestamp();
    Signature::new("Fixture Bot", "bot@example.com", &Time::new(ts, 0)).unwrap()
}

fn commit_files(repo: &Repository, message: &str, date: NaiveDate, files: &[(&str, String)]) {
    let workdir = repo.workdir().unwrap().to_path_buf();
    for (path, content) in files {
        let target = workdir.join(path);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).unwrap();
        }
        std::fs::write(&target, content).unwrap();
    }
    let mut index = repo.index().unwrap();
    index
        .add_all(["*"].iter(), git2::IndexAddOption::DEFAULT, None)
        .unwrap();
    index.write().unwrap();
    let tree_id = index.write_tree().unwrap();
    let tree = repo.find_tree(tree_id).unwrap();
    let sig = signature_at(date);
    let parents: Vec<git2::Commit> = match repo.head() {
        Ok(head) => vec![head.peel_to_commit().unwrap()],
        Err(_) => vec![],
    };
    let parent_refs: Vec<&git2::Commit> = parents.iter().collect();
    repo.commit(Some("HEAD"), &sig, &sig, message, &tree, &parent_refs)
        .unwrap();
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

// File contents at each stage of the fixture history. Methods are written
// so that their RandomCut eligibility and docstring validity are known.

fn util_v1() -> String {
    "def legacy_helper(x):\n    return x\n\n\ndef old_twin(a, b):\n    return a, b\n".to_string()
}

fn util_v2() -> String {
    // legacy_helper body edited pre-window; same method names.
    "def legacy_helper(x):\n    return x + 0\n\n\ndef old_twin(a, b):\n    return a, b\n"
        .to_string()
}

fn util_v3() -> String {
    // compute_stats added in-window.
    format!(
        "{}\n\n{}",
        util_v2().trim_end(),
        "def compute_stats(values):\n    \"\"\"Compute the mean and the variance of the provided values and return both numbers together.\"\"\"\n    total = sum(values)\n    mean = total / len(values)\n    spread = sum((v - mean) ** 2 for v in values)\n    return mean, spread / len(values)\n"
    )
}

fn util_v4() -> String {
    // stream_rows added in-window at the end boundary; 2-word docstring.
    format!(
        "{}\n\n{}",
        util_v3().trim_end(),
        "async def stream_rows(cursor):\n    \"\"\"stream rows\"\"\"\n    batch = await cursor.fetch(64)\n    while batch:\n        yield batch\n        batch = await cursor.fetch(64)\n"
    )
}

fn models_v1() -> String {
    "class Base:\n    def save(self):\n        return True\n\n    def load(self):\n        return None\n".to_string()
}

fn models_v2() -> String {
    format!(
        "{}\n\n{}",
        models_v1().trim_end(),
        "class Cache:\n    def put(self, key, value):\n        \"\"\"Store the value under the given key after validating that the key is well formed.\"\"\"\n        def validate(k):\n            return isinstance(k, str) and len(k) > 0\n        if not validate(key):\n            raise ValueError(key)\n        self.store[key] = value\n        return value\n\n    def get(self, key):\n        return self.store.get(key)\n"
    )
}

fn math_ops_v1() -> String {
    concat!(
        "def add_numbers(left, right):\n",
        "    \"\"\"Return the sum of the two operands and raise an error when the result overflows.\"\"\"\n",
        "    checked = int(left) + int(right)\n",
        "    return checked\n",
        "\n\n",
        "def multiply_values(items):\n",
        "    \"\"\"scale values\"\"\"\n",
        "    product = 1\n",
        "    for item in items:\n",
        "        product = product * item\n",
        "    return product\n",
        "\n\n",
        "def power_series(base, terms):\n",
        "    acc = 0\n",
        "    for n in range(terms):\n",
        "        if n % 2 == 0:\n",
        "            acc = acc + base ** n\n",
        "    return acc\n",
    )
    .to_string()
}

fn math_ops_v2() -> String {
    // add_numbers body edited; nothing new.
    math_ops_v1().replace(
        "    checked = int(left) + int(right)\n    return checked\n",
        "    checked = int(left) + int(right)\n    assert checked == left + right\n    return checked\n",
    )
}

fn math_ops_v3() -> String {
    // multiply_values renamed to scaled_product; body kept.
    math_ops_v2().replace(
        "def multiply_values(items):\n    \"\"\"scale values\"\"\"",
        "def scaled_product(items):\n    \"\"\"scale the values\"\"\"",
    )
}

fn net_client_v1() -> String {
    concat!(
        "import urllib.request\n\n\n",
        "def fetch_url(url, timeout=30):\n",
        "    \"\"\"Download the resource at the given address and return its decoded body as readable text.\"\"\"\n",
        "    request = urllib.request.Request(url)\n",
        "    with urllib.request.urlopen(request, timeout=timeout) as response:\n",
        "        payload = response.read()\n",
        "    return payload.decode(\"utf-8\")\n",
    )
    .to_string()
}

fn docs_readme() -> String {
    "fixture repository for mining tests\n".to_string()
}

/// The scripted history: 12 commits, 7 inside the 2022-01-01..2023-01-01
/// window, with file additions, body-only edits, and a rename.
pub fn fixture_commits() -> Vec<FixtureCommit> {
    vec![
        FixtureCommit {
            message: "add legacy utilities",
            date: date(2021, 6, 1),
            files: vec![("util.py", util_v1())],
        },
        FixtureCommit {
            message: "add base model",
            date: date(2021, 9, 15),
            files: vec![("models.py", models_v1())],
        },
        FixtureCommit {
            message: "tweak legacy helper before the window",
            date: date(2021, 12, 31),
            files: vec![("util.py", util_v2())],
        },
        FixtureCommit {
            message: "add arithmetic helpers",
            date: date(2022, 1, 1),
            files: vec![("math_ops.py", math_ops_v1())],
        },
        FixtureCommit {
            message: "harden add_numbers against silent overflow regressions in mixed integer inputs",
            date: date(2022, 3, 10),
            files: vec![("math_ops.py", math_ops_v2())],
        },
        FixtureCommit {
            message: "rename multiply_values to scaled_product for clarity",
            date: date(2022, 5, 20),
            files: vec![("math_ops.py", math_ops_v3())],
        },
        FixtureCommit {
            message: "introduce a small cache with validated keys and a nested checker function",
            date: date(2022, 7, 4),
            files: vec![("models.py", models_v2())],
        },
        FixtureCommit {
            message: "add an http client helper that downloads a resource and decodes the body",
            date: date(2022, 9, 1),
            files: vec![("net/client.py", net_client_v1())],
        },
        FixtureCommit {
            message: "add compute_stats with mean and variance over the provided values collection",
            date: date(2022, 11, 11),
            files: vec![("util.py", util_v3())],
        },
        FixtureCommit {
            message: "add async row streaming",
            date: date(2023, 1, 1),
            files: vec![("util.py", util_v4())],
        },
        FixtureCommit {
            message: "post-window readme",
            date: date(2023, 2, 1),
            files: vec![("README.md", docs_readme())],
        },
        FixtureCommit {
            message: "post-window helper",
            date: date(2023, 3, 15),
            files: vec![(
                "late.py",
                "def post_window_fn():\n    return 42\n".to_string(),
            )],
        },
    ]
}

/// New methods the in-window commits introduce, by hand enumeration:
/// c4 adds three top-level functions, c5 edits a body (nothing new), c6
/// renames one function (the new name counts), c7 adds two cache methods plus
/// a nested function, c8/c9/c10 add one method each.
pub const EXPECTED_NEW_METHODS: [&str; 10] = [
    "add_numbers",
    "multiply_values",
    "power_series",
    "scaled_product",
    "Cache.put",
    "Cache.put.validate",
    "Cache.get",
    "fetch_url",
    "compute_stats",
    "stream_rows",
];

/// Build the fixture repository in `dir` and return the path.
pub fn build_fixture_repo(dir: &Path) -> PathBuf {
    let repo_dir = dir.join("fixture-repo");
    let repo = Repository::init(&repo_dir).unwrap();
    for commit in fixture_commits() {
        commit_files(&repo, commit.message, commit.date, &commit.files);
    }
    repo_dir
}

/// A 3-commit repository whose in-window merge commit must be excluded.
pub fn build_merge_fixture_repo(dir: &Path) -> PathBuf {
    let repo_dir = dir.join("merge-repo");
    let repo = Repository::init(&repo_dir).unwrap();
    commit_files(
        &repo,
        "base",
        date(2022, 1, 10),
        &[("a.py", "def base_fn():\n    return 0\n".to_string())],
    );
    let default_ref = repo.head().unwrap().name().unwrap().to_string();
    let base = repo.head().unwrap().peel_to_commit().unwrap();

    // Branch commit.
    let branch = repo.branch("feature", &base, false).unwrap();
    repo.set_head(branch.get().name().unwrap()).unwrap();
    repo.checkout_head(Some(git2::build::CheckoutBuilder::new().force()))
        .unwrap();
    commit_files(
        &repo,
        "feature work",
        date(2022, 2, 1),
        &[("b.py", "def feature_fn():\n    return 1\n".to_string())],
    );
    let feature = repo.head().unwrap().peel_to_commit().unwrap();

    // Back to the default branch and merge.
    repo.set_head(&default_ref).unwrap();
    repo.checkout_head(Some(git2::build::CheckoutBuilder::new().force()))
        .unwrap();
    let sig = signature_at(date(2022, 3, 1));
    let mut index = repo
        .merge_commits(&base, &feature, None)
        .unwrap();
    let tree_id = index.write_tree_to(&repo).unwrap();
    let tree = repo.find_tree(tree_id).unwrap();
    repo.commit(
        Some("HEAD"),
        &sig,
        &sig,
        "merge feature branch",
        &tree,
        &[&base, &feature],
    )
    .unwrap();
    repo_dir
}

// ---------------------------------------------------------------------------
// minimal HTTP host for search tests
// ---------------------------------------------------------------------------

pub struct MockHost {
    pub base_url: String,
    pub hits: Arc<AtomicUsize>,
    handle: Option<std::thread::JoinHandle<()>>,
    shutdown: Arc<std::sync::atomic::AtomicBool>,
}

pub struct CannedResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl CannedResponse {
    pub fn json(body: impl Into<String>) -> Self {
        CannedResponse {
            status: 200,
            headers: vec![("Content-Type".into(), "application/json".into())],
            body: body.into(),
        }
    }

    pub fn status(status: u16, headers: Vec<(String, String)>) -> Self {
        CannedResponse {
            status,
            headers,
            body: "{}".to_string(),
        }
    }
}

impl MockHost {
    /// Serve canned responses chosen by `route(path_and_query, hit_index)`.
    pub fn start<F>(route: F) -> Self
    where
        F: Fn(&str, usize) -> CannedResponse + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        listener.set_nonblocking(true).unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let shutdown = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let thread_hits = hits.clone();
        let thread_shutdown = shutdown.clone();
        let handle = std::thread::spawn(move || {
            while !thread_shutdown.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let hit = thread_hits.fetch_add(1, Ordering::SeqCst);
                        handle_connection(stream, &route, hit);
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(std::time::Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });
        MockHost {
            base_url: format!("http://{addr}"),
            hits,
            handle: Some(handle),
            shutdown,
        }
    }
}

impl Drop for MockHost {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection<F>(stream: TcpStream, route: &F, hit: usize)
where
    F: Fn(&str, usize) -> CannedResponse,
{
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    let target = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or("/")
        .to_string();
    // Drain headers; requests have no body.
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).is_err() || line == "\r\n" || line.is_empty() {
            break;
        }
        if let Some(value) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = value.trim().parse().unwrap_or(0);
        }
    }
    if content_length > 0 {
        let mut body = vec![0u8; content_length];
        let _ = reader.read_exact(&mut body);
    }

    let response = route(&target, hit);
    let mut stream = stream;
    let mut head = format!(
        "HTTP/1.1 {} {}\r\nContent-Length: {}\r\nConnection: close\r\n",
        response.status,
        match response.status {
            200 => "OK",
            403 => "Forbidden",
            401 => "Unauthorized",
            429 => "Too Many Requests",
            _ => "Status",
        },
        response.body.len()
    );
    for (name, value) in &response.headers {
        head.push_str(&format!("{name}: {value}\r\n"));
    }
    head.push_str("\r\n");
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(response.body.as_bytes());
    let _ = stream.flush();
}

/// A search item JSON object in the host's response shape.
pub fn search_item(
    full_name: &str,
    stars: u64,
    size_kb: u64,
    fork: bool,
    pushed_at: &str,
) -> serde_json::Value {
    serde_json::json!({
        "full_name": full_name,
        "clone_url": format!("https://example.invalid/{full_name}.git"),
        "stargazers_count": stars,
        "size": size_kb,
        "default_branch": "main",
        "pushed_at": pushed_at,
        "fork": fork,
        "language": "Python",
    })
}

pub fn search_page(items: &[serde_json::Value]) -> String {
    serde_json::json!({
        "total_count": items.len(),
        "incomplete_results": false,
        "items": items,
    })
    .to_string()
}

/// Parse `page=N` out of a request target.
pub fn page_of(target: &str) -> u32 {
    target
        .split('&')
        .find_map(|kv| kv.strip_prefix("page="))
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
}

pub fn percent_decode(target: &str) -> String {
    let mut out = String::new();
    let bytes = target.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            if let Ok(byte) = u8::from_str_radix(&target[i + 1..i + 3], 16) {
                out.push(byte as char);
                i += 3;
                continue;
            }
        }
        // Form encoding spells spaces as '+' inside the query string.
        out.push(if bytes[i] == b'+' { ' ' } else { bytes[i] as char });
        i += 1;
    }
    out
}
