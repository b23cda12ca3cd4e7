//! Commit mining against the scripted fixture repository.

mod common;

use common::{build_fixture_repo, build_merge_fixture_repo, fixture_commits, EXPECTED_NEW_METHODS};
use snipforge::discovery::open_local;
use snipforge::mining::{extract_new_methods, list_window_commits, mine_repository, TimeWindow};
use std::collections::BTreeSet;
use std::process::Command;

fn window() -> TimeWindow {
    "2022-01-01..2023-01-01".parse().unwrap()
}

#[test]
fn window_commits_are_exactly_the_seven_scripted_ones_oldest_first() {
    let dir = tempfile::tempdir().unwrap();
    let repo_path = build_fixture_repo(dir.path());
    let repo = open_local(&repo_path, "fixture/repo").unwrap();

    let commits = list_window_commits(&repo, window()).unwrap();
    assert_eq!(commits.len(), 7, "7 of the 12 scripted commits are in-window");

    let expected_messages: Vec<&str> = fixture_commits()
        .iter()
        .filter(|c| c.date >= chrono::NaiveDate::from_ymd_opt(2022, 1, 1).unwrap())
        .filter(|c| c.date <= chrono::NaiveDate::from_ymd_opt(2023, 1, 1).unwrap())
        .map(|c| c.message)
        .collect();
    let got_messages: Vec<String> = commits.iter().map(|c| c.message.trim().to_string()).collect();
    assert_eq!(got_messages, expected_messages, "oldest first, in script order");

    for commit in &commits {
        assert!(window().contains(commit.committer_date), "window soundness");
        assert_eq!(commit.commit_id.len(), 40);
    }
}

#[test]
fn window_before_repo_creation_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let repo_path = build_fixture_repo(dir.path());
    let repo = open_local(&repo_path, "fixture/repo").unwrap();
    let early: TimeWindow = "2019-01-01..2019-12-31".parse().unwrap();
    assert!(list_window_commits(&repo, early).unwrap().is_empty());
}

#[test]
fn full_span_window_returns_all_non_merge_commits() {
    let dir = tempfile::tempdir().unwrap();
    let repo_path = build_fixture_repo(dir.path());
    let repo = open_local(&repo_path, "fixture/repo").unwrap();
    let full: TimeWindow = "2021-06-01..2023-03-15".parse().unwrap();
    assert_eq!(list_window_commits(&repo, full).unwrap().len(), 12);
}

#[test]
fn merge_commits_are_excluded() {
    let dir = tempfile::tempdir().unwrap();
    let repo_path = build_merge_fixture_repo(dir.path());
    let repo = open_local(&repo_path, "fixture/merge").unwrap();
    let commits = list_window_commits(&repo, window()).unwrap();
    assert_eq!(commits.len(), 2, "base + feature; the merge is excluded");
    assert!(commits.iter().all(|c| c.message != "merge feature branch"));
}

#[test]
fn mined_methods_match_the_hand_enumerated_set() {
    let dir = tempfile::tempdir().unwrap();
    let repo_path = build_fixture_repo(dir.path());
    let repo = open_local(&repo_path, "fixture/repo").unwrap();

    let (snippets, skipped) = mine_repository(&repo, window()).unwrap();
    assert_eq!(skipped, 0);
    let got: BTreeSet<&str> = snippets.iter().map(|s| s.fun_name.as_str()).collect();
    let expected: BTreeSet<&str> = EXPECTED_NEW_METHODS.into_iter().collect();
    assert_eq!(got, expected);
    assert_eq!(snippets.len(), EXPECTED_NEW_METHODS.len(), "one snippet per new method");

    // Snippet fields are verbatim slices of the after version.
    for snippet in &snippets {
        assert!(snippet.code.starts_with("def ") || snippet.code.starts_with("async def "));
        assert!(snippet.signature.ends_with(':'));
        assert!(window().contains(snippet.committer_date));
    }

    let stats = snippets.iter().find(|s| s.fun_name == "compute_stats").unwrap();
    assert_eq!(
        stats.docstring.as_deref(),
        Some("Compute the mean and the variance of the provided values and return both numbers together.")
    );
    let validate = snippets.iter().find(|s| s.fun_name == "Cache.put.validate").unwrap();
    assert_eq!(validate.docstring, None);
    assert_eq!(validate.path, "models.py");
}

#[test]
fn body_only_edit_produces_no_snippets() {
    let dir = tempfile::tempdir().unwrap();
    let repo_path = build_fixture_repo(dir.path());
    let repo = open_local(&repo_path, "fixture/repo").unwrap();
    let commits = list_window_commits(&repo, window()).unwrap();

    let body_edit = commits
        .iter()
        .find(|c| c.message.starts_with("harden add_numbers"))
        .unwrap();
    let (snippets, _) = extract_new_methods(&repo, body_edit).unwrap();
    assert!(snippets.is_empty(), "editing a body adds no new names");
}

#[test]
fn rename_counts_only_the_new_name() {
    let dir = tempfile::tempdir().unwrap();
    let repo_path = build_fixture_repo(dir.path());
    let repo = open_local(&repo_path, "fixture/repo").unwrap();
    let commits = list_window_commits(&repo, window()).unwrap();

    let rename = commits
        .iter()
        .find(|c| c.message.starts_with("rename multiply_values"))
        .unwrap();
    let (snippets, _) = extract_new_methods(&repo, rename).unwrap();
    let names: Vec<&str> = snippets.iter().map(|s| s.fun_name.as_str()).collect();
    assert_eq!(names, ["scaled_product"], "the old name's disappearance is ignored");
}

#[test]
fn swapped_diff_direction_yields_disjoint_names() {
    // New-method soundness: names new in (parent -> commit) cannot also be
    // new in (commit -> parent).
    let dir = tempfile::tempdir().unwrap();
    let repo_path = build_fixture_repo(dir.path());
    let repo = open_local(&repo_path, "fixture/repo").unwrap();
    let commits = list_window_commits(&repo, window()).unwrap();
    let rename = commits
        .iter()
        .find(|c| c.message.starts_with("rename multiply_values"))
        .unwrap();

    let (forward, _) = extract_new_methods(&repo, rename).unwrap();
    let forward_names: BTreeSet<&str> = forward.iter().map(|s| s.fun_name.as_str()).collect();
    // The swapped direction from the file versions directly: names in the
    // before version that are absent from the after version.
    let backward_names: BTreeSet<&str> = ["multiply_values"].into_iter().collect();
    assert!(forward_names.is_disjoint(&backward_names));
}

#[test]
fn extraction_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let repo_path = build_fixture_repo(dir.path());
    let repo = open_local(&repo_path, "fixture/repo").unwrap();
    let (a, _) = mine_repository(&repo, window()).unwrap();
    let (b, _) = mine_repository(&repo, window()).unwrap();
    assert_eq!(a, b);
}

/// Independent oracle: Python's own ast module computes the qualified-name
/// set difference for every changed file of every in-window commit. Skipped
/// when python3 is unavailable.
#[test]
fn name_set_diff_agrees_with_python_ast_oracle() {
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 unavailable; oracle cross-check skipped");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let repo_path = build_fixture_repo(dir.path());
    let repo = open_local(&repo_path, "fixture/repo").unwrap();

    let (snippets, _) = mine_repository(&repo, window()).unwrap();
    let mut got: Vec<String> = snippets
        .iter()
        .map(|s| format!("{}::{}", s.path, s.fun_name))
        .collect();
    got.sort();

    // Reconstruct each file version from the scripted history and diff the
    // qualified name sets with Python.
    let script = r#"
import ast, json, sys

def qualified_defs(source):
    defs = {}
    def walk(node, scope):
        for child in ast.iter_child_nodes(node):
            if isinstance(child, (ast.FunctionDef, ast.AsyncFunctionDef)):
                q = scope + [child.name]
                defs[".".join(q)] = ast.get_docstring(child, clean=True)
                walk(child, q)
            elif isinstance(child, ast.ClassDef):
                walk(child, scope + [child.name])
            else:
                walk(child, scope)
    walk(ast.parse(source), [])
    return defs

history = json.load(sys.stdin)
new = []
docs = {}
for entry in history:
    before = entry["before"]
    after = entry["after"]
    before_names = set(qualified_defs(before)) if before is not None else set()
    after_defs = qualified_defs(after)
    for name in sorted(set(after_defs) - before_names):
        key = entry["path"] + "::" + name
        new.append(key)
        docs[key] = after_defs[name]
print(json.dumps({"new": sorted(new), "docs": docs}))
"#;

    // Build (path, before, after) for the in-window commits from the script.
    let mut file_state: std::collections::HashMap<&str, String> = Default::default();
    let mut history = Vec::new();
    let window_start = chrono::NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
    let window_end = chrono::NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
    for commit in fixture_commits() {
        for (path, content) in &commit.files {
            if path.ends_with(".py") && commit.date >= window_start && commit.date <= window_end {
                history.push(serde_json::json!({
                    "path": path,
                    "before": file_state.get(path),
                    "after": content,
                }));
            }
            file_state.insert(path, content.clone());
        }
    }

    let mut child = Command::new("python3")
        .arg("-c")
        .arg(script)
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child
        .stdin
        .as_mut()
        .unwrap()
        .write_all(serde_json::to_string(&history).unwrap().as_bytes())
        .unwrap();
    let output = child.wait_with_output().unwrap();
    assert!(output.status.success(), "oracle failed: {:?}", output);
    let oracle: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    let expected: Vec<String> = oracle["new"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert_eq!(got, expected, "tree-sitter name-set diff vs python ast oracle");

    // The extracted docstrings match Python's own cleaned docstrings.
    for snippet in &snippets {
        let key = format!("{}::{}", snippet.path, snippet.fun_name);
        let oracle_doc = oracle["docs"][&key].as_str().map(String::from);
        assert_eq!(
            snippet.docstring, oracle_doc,
            "docstring of {key} disagrees with the python ast oracle"
        );
    }
}
