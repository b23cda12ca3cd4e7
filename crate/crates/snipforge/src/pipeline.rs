//! Stage orchestration. Every stage reads its inputs from the store and
//! writes its outputs back, so each subcommand can resume a partial run.

use crate::config::Config;
use crate::curation;
use crate::discovery::{self, LocalRepo, SearchClient};
use crate::error::{Error, Result};
use crate::features::{DataPoint, Enricher};
use crate::langdetect::TrigramDetector;
use crate::manifest::{self, ExportManifest, RunManifest, ToolVersions};
use crate::mining::{self, RawSnippet};
use crate::prompts::{self, PromptRecord, TemplateCatalog};
use crate::store::{export_jsonl, Filter, Store};
use crate::testbed::{self, SeTask, Testbed, TestbedName};
use crate::tokenizer::BpeTokenizer;
use crate::vuln;
use rayon::prelude::*;
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Outcome of running one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageOutcome {
    Completed,
    /// The stage could not run; the pipeline continues and the run is
    /// reported as partial (exit code 2).
    Skipped(String),
}

pub struct Pipeline {
    pub config: Config,
    store: Store,
    skipped: BTreeMap<String, String>,
    stage_seconds: BTreeMap<String, f64>,
}

impl Pipeline {
    pub fn open(config: Config) -> Result<Self> {
        config.validate()?;
        if let Some(parent) = config.store_path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let store = Store::open(&config.store_path)?;
        Ok(Pipeline {
            config,
            store,
            skipped: BTreeMap::new(),
            stage_seconds: BTreeMap::new(),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut Store {
        &mut self.store
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let result = f(self);
        self.stage_seconds
            .insert(stage.to_string(), start.elapsed().as_secs_f64());
        result
    }

    /// Resolve the repositories to mine: explicit entries from the config, or
    /// a host search plus clone when none are given.
    pub fn discover(&mut self) -> Result<Vec<LocalRepo>> {
        self.timed("discover", |p| {
            if !p.config.repos.is_empty() {
                return p
                    .config
                    .repos
                    .clone()
                    .iter()
                    .map(|entry| resolve_repo_entry(entry, &p.config.cache_dir))
                    .collect();
            }
            let token = std::env::var(discovery::TOKEN_ENV_VAR).ok();
            let client = SearchClient::github(token);
            let refs = client.search_repositories(&p.config.query, u32::MAX)?;
            log::info!("search returned {} repositories", refs.len());
            let cache_dir = p.config.cache_dir.clone();
            refs.par_iter()
                .map(|r| discovery::materialize_repository(r, &cache_dir))
                .collect()
        })
    }

    /// Mine new methods from every in-window commit of the given repos.
    pub fn mine(&mut self, repos: &[LocalRepo]) -> Result<u64> {
        let window = self.config.window;
        self.timed("mine", |p| {
            let mined: Vec<(Vec<RawSnippet>, u32)> = repos
                .par_iter()
                .map(|repo| mining::mine_repository(repo, window))
                .collect::<Result<_>>()?;
            let mut total = 0u64;
            for (snippets, skipped_files) in mined {
                if skipped_files > 0 {
                    log::warn!("{skipped_files} unreadable file versions skipped");
                }
                total += snippets.len() as u64;
                p.store.upsert_raw(&snippets)?;
            }
            Ok(total)
        })
    }

    /// Compute feature dimensions for every raw snippet not yet enriched.
    pub fn enrich(&mut self) -> Result<u64> {
        self.timed("enrich", |p| {
            let tokenizer = BpeTokenizer::from_file(&p.config.tokenizer_model)?;
            let detector = TrigramDetector;
            let enricher = Enricher {
                tokenizer: &tokenizer,
                detector: &detector,
                doc_min_words: p.config.thresholds.doc_min_words,
                language_threshold: p.config.thresholds.language_confidence,
            };
            let raw = p.store.load_unenriched()?;
            let points: Vec<DataPoint> = raw
                .into_par_iter()
                .map(|snippet| enricher.enrich(snippet))
                .collect::<Result<_>>()?;
            p.store.upsert_points(&points)?;
            Ok(points.len() as u64)
        })
    }

    /// Dedup (exact then near), validate, and sample for manual review.
    pub fn curate(&mut self) -> Result<curation::DedupReport> {
        let window = self.config.window;
        let threshold = self.config.thresholds.near_dup;
        let review_sample = self.config.thresholds.review_sample;
        let out_dir = self.config.out_dir.clone();
        let verdicts = self.config.review_verdicts.clone();
        let master_seed = self.config.master_seed;
        self.timed("curate", |p| {
            let points = p.store.query_points(&Filter::all())?;
            let all_ids: Vec<String> = points.iter().map(|pt| pt.point_id.clone()).collect();
            let (mut kept, report) = curation::curate(points, threshold);
            if let Some(sheet) = &verdicts {
                kept = curation::apply_review_verdicts(kept, sheet)?;
            }
            let kept_ids: HashSet<&str> = kept.iter().map(|pt| pt.point_id.as_str()).collect();
            let dropped: Vec<String> = all_ids
                .iter()
                .filter(|id| !kept_ids.contains(id.as_str()))
                .cloned()
                .collect();
            p.store.set_kept(&dropped, false)?;
            let kept_id_vec: Vec<String> = kept.iter().map(|pt| pt.point_id.clone()).collect();
            p.store.set_kept(&kept_id_vec, true)?;

            for point in &kept {
                let base = curation::validate_point(point, window, false).passed;
                let doc = curation::validate_point(point, window, true).passed;
                p.store.set_validation(&point.point_id, base, doc)?;
            }
            p.store.save_dedup_report("curate", &report)?;

            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let worksheet = out_dir.join("review_worksheet.csv");
            curation::sample_for_manual_review(
                &kept,
                review_sample,
                crate::derive_seed("review", master_seed),
                Some(&worksheet),
            )?;
            Ok(report)
        })
    }

    /// Run the external scanner over per-commit file snapshots and map
    /// findings onto kept points. A missing scanner skips the stage.
    pub fn scan(&mut self, repos: &[LocalRepo]) -> Result<StageOutcome> {
        let scanner = self.config.scanner.clone();
        self.timed("scan", |p| {
            if !scanner_available(&scanner.codeql_path) {
                let reason = format!("scanner {:?} not found", scanner.codeql_path);
                log::warn!("{reason}; vulnerability stage skipped");
                p.skipped.insert("scan".to_string(), reason.clone());
                return Ok(StageOutcome::Skipped(reason));
            }
            let top25 = match &scanner.cwe_list {
                Some(path) => {
                    let text =
                        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    vuln::load_cwe_list(&text)
                }
                None => vuln::load_cwe_list(vuln::CWE_TOP25_2021),
            };

            let mut points = p.store.query_points(&Filter::kept())?;
            // Scan each (repository, commit) snapshot once.
            let mut groups: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
            for point in &points {
                groups
                    .entry((point.snippet.repository.clone(), point.snippet.commit_id.clone()))
                    .or_default()
                    .push(point.snippet.path.clone());
            }
            let cache = p.config.cache_dir.clone();

            // One scanner process per snapshot, at most max_concurrent at a
            // time; mapping stays sequential over the collected findings.
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(scanner.max_concurrent.max(1))
                .build()
                .map_err(|e| Error::ScanFailed {
                    code: None,
                    stderr: e.to_string(),
                })?;
            let scans: Vec<((String, String), Result<Vec<vuln::RawFinding>>)> =
                pool.install(|| {
                    groups
                        .into_iter()
                        .collect::<Vec<_>>()
                        .into_par_iter()
                        .map(|((repository, commit_id), paths)| {
                            let result = (|| {
                                let Some(repo) =
                                    repos.iter().find(|r| r.full_name == repository)
                                else {
                                    log::warn!(
                                        "repository {repository} not materialized; scan skipped"
                                    );
                                    return Ok(Vec::new());
                                };
                                let snapshot = cache.join(".scans").join(&commit_id);
                                write_snapshot(&repo.workdir, &commit_id, &paths, &snapshot)?;
                                vuln::run_scan(
                                    &snapshot,
                                    &scanner.suite,
                                    &scanner.codeql_path,
                                    &top25,
                                )
                            })();
                            ((repository, commit_id), result)
                        })
                        .collect()
                });

            for ((repository, commit_id), result) in scans {
                let findings = result?;
                let idxs: Vec<usize> = points
                    .iter()
                    .enumerate()
                    .filter(|(_, pt)| {
                        pt.snippet.repository == repository && pt.snippet.commit_id == commit_id
                    })
                    .map(|(i, _)| i)
                    .collect();
                let mut scratch: Vec<DataPoint> =
                    idxs.iter().map(|&i| points[i].clone()).collect();
                let stats = vuln::map_findings(&findings, &mut scratch);
                log::info!(
                    "commit {commit_id}: {} findings attached, {} outside mined methods",
                    stats.attached,
                    stats.dropped_outside
                );
                for (&i, updated) in idxs.iter().zip(scratch) {
                    points[i] = updated;
                }
            }
            p.store.upsert_points(&points)?;
            Ok(StageOutcome::Completed)
        })
    }

    /// Build and export the named testbeds from kept, validated points.
    pub fn build_testbeds(&mut self, names: &[TestbedName]) -> Result<Vec<Testbed>> {
        let cfg = self.config.testbed_config();
        self.build_testbeds_with(names, cfg)
    }

    /// Same, with an explicit testbed config (e.g. a different cut mode).
    pub fn build_testbeds_with(
        &mut self,
        names: &[TestbedName],
        cfg: testbed::TestbedConfig,
    ) -> Result<Vec<Testbed>> {
        let master_seed = self.config.master_seed;
        let out_dir = self.config.out_dir.clone();
        let config_hash = self.config.hash();
        let tokenizer_hash = self.tokenizer_hash();
        self.timed("testbed", |p| {
            let mut filter = Filter::kept();
            filter.valid_only = true;
            let points = p.store.query_points(&filter)?;
            let mut built = Vec::new();
            for &name in names {
                match testbed::build_testbed(name, &points, &cfg, master_seed) {
                    Ok(testbed) => {
                        p.store.save_testbed(&testbed)?;
                        export_testbed(
                            &testbed,
                            &out_dir,
                            &config_hash,
                            &tokenizer_hash,
                            p.scanner_version(),
                        )?;
                        built.push(testbed);
                    }
                    Err(Error::EmptyTestbed { name: n }) => {
                        log::warn!("testbed {n} is empty after filtering");
                        export_empty_testbed(
                            name,
                            &out_dir,
                            &config_hash,
                            &tokenizer_hash,
                            p.scanner_version(),
                            master_seed,
                        )?;
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(built)
        })
    }

    /// Render prompt datasets for the given testbeds. `specs` are template
    /// ids or `+`-joined compositions; when empty, each testbed's designated
    /// templates are used.
    pub fn render_prompts(
        &mut self,
        names: &[TestbedName],
        specs: &[String],
    ) -> Result<Vec<(TestbedName, Vec<PromptRecord>)>> {
        let catalog = match &self.config.template_catalog {
            Some(path) => TemplateCatalog::from_file(path)?,
            None => TemplateCatalog::default_catalog(),
        };
        let out_dir = self.config.out_dir.clone();
        let config_hash = self.config.hash();
        let tokenizer_hash = self.tokenizer_hash();
        self.timed("prompts", |p| {
            let mut rendered = Vec::new();
            for &name in names {
                let Some(testbed) = p.store.load_testbed(name)? else {
                    log::warn!("testbed {name} not built; prompts skipped");
                    continue;
                };
                let specs: Vec<Vec<String>> = if specs.is_empty() {
                    designated_templates(name)
                        .iter()
                        .map(|id| vec![id.to_string()])
                        .collect()
                } else {
                    specs.iter().map(|s| prompts::parse_template_spec(s)).collect()
                };
                if specs.is_empty() {
                    log::info!("testbed {name} has no designated templates");
                    continue;
                }
                let mut records = Vec::new();
                let mut slotless = 0u32;
                for point in &testbed.points {
                    for spec in &specs {
                        let result = if spec.len() == 1 {
                            let task = template_task(&spec[0], testbed.task);
                            prompts::render(&catalog, &spec[0], point, task)
                        } else {
                            let ids: Vec<&str> = spec.iter().map(String::as_str).collect();
                            let task = template_task(&spec[0], testbed.task);
                            prompts::compose(&catalog, &ids, point, task)
                        };
                        match result {
                            Ok(record) => records.push(record),
                            Err(Error::MissingSlot { slot, .. }) => {
                                slotless += 1;
                                log::warn!(
                                    "point {} lacks slot {slot} for {spec:?}",
                                    point.point_id
                                );
                            }
                            Err(e) => return Err(e),
                        }
                    }
                }
                if slotless > 0 {
                    log::warn!("{slotless} renders skipped for missing slots in {name}");
                }
                p.store.upsert_prompts(name, &records)?;
                let manifest = ExportManifest {
                    artifact: "prompts".to_string(),
                    name: name.to_string(),
                    task: testbed.task.to_string(),
                    seed: testbed.seed,
                    config_hash: config_hash.clone(),
                    record_count: records.len() as u64,
                    report: None,
                    empty_testbed: records.is_empty(),
                    tool_versions: ToolVersions::current(
                        &tokenizer_hash,
                        p.scanner_version(),
                    ),
                };
                let base = out_dir.join("prompts");
                export_jsonl(&records, &base.join(format!("{name}.jsonl")))?;
                manifest::write_json(&manifest, &base.join(format!("{name}.manifest.json")))?;
                rendered.push((name, records));
            }
            Ok(rendered)
        })
    }

    /// Re-export a previously built artifact from the store.
    pub fn export(&mut self, artifact: &str) -> Result<PathBuf> {
        let out_dir = self.config.out_dir.clone();
        let config_hash = self.config.hash();
        let tokenizer_hash = self.tokenizer_hash();
        let (kind, name) = artifact.split_once(':').ok_or_else(|| {
            Error::InvalidConfig(format!(
                "artifact {artifact:?} is not testbed:<Name> or prompts:<Name>"
            ))
        })?;
        let name: TestbedName = name.parse()?;
        match kind {
            "testbed" => {
                let testbed = self.store.load_testbed(name)?.ok_or_else(|| {
                    Error::InvalidConfig(format!("testbed {name} has not been built"))
                })?;
                export_testbed(
                    &testbed,
                    &out_dir,
                    &config_hash,
                    &tokenizer_hash,
                    self.scanner_version(),
                )?;
                Ok(out_dir.join("testbeds").join(format!("{name}.jsonl")))
            }
            "prompts" => {
                let records = self.store.load_prompts(name)?;
                let base = out_dir.join("prompts");
                export_jsonl(&records, &base.join(format!("{name}.jsonl")))?;
                Ok(base.join(format!("{name}.jsonl")))
            }
            other => Err(Error::InvalidConfig(format!(
                "unknown artifact kind {other:?}"
            ))),
        }
    }

    /// The full pipeline. Returns the run manifest; partial stages are
    /// recorded there rather than failing the run.
    pub fn run_all(&mut self) -> Result<RunManifest> {
        let repos = self.discover()?;
        let mined = self.mine(&repos)?;
        let enriched = self.enrich()?;
        let report = self.curate()?;
        self.scan(&repos)?;
        let testbeds = self.build_testbeds(&TestbedName::ALL)?;
        let names: Vec<TestbedName> = testbeds.iter().map(|t| t.name).collect();
        self.render_prompts(&names, &[])?;

        let mut manifest = RunManifest::new(
            &self.config.hash(),
            self.config.master_seed,
            ToolVersions::current(&self.tokenizer_hash(), self.scanner_version()),
        );
        log::info!("mined {mined} snippets this run, enriched {enriched}");
        manifest.counts.mined = self.store.count_points()?;
        manifest.counts.enriched = self.store.count_enriched()?;
        manifest.counts.exact_removed = report.exact_removed;
        manifest.counts.near_removed = report.near_removed;
        manifest.counts.kept = self.store.count_kept()?;
        manifest.counts.validated = self.store.count_validated()?;
        for testbed in &testbeds {
            manifest
                .counts
                .testbed_sizes
                .insert(testbed.name.to_string(), testbed.points.len() as u64);
        }
        manifest.skipped_stages = self.skipped.clone();
        manifest.stage_seconds = self.stage_seconds.clone();
        manifest::write_json(&manifest, &self.config.out_dir.join("run_manifest.json"))?;
        Ok(manifest)
    }

    pub fn skipped_stages(&self) -> &BTreeMap<String, String> {
        &self.skipped
    }

    fn tokenizer_hash(&self) -> String {
        manifest::file_sha256(&self.config.tokenizer_model).unwrap_or_else(|_| "absent".into())
    }

    fn scanner_version(&self) -> &str {
        if self.skipped.contains_key("scan") {
            "absent"
        } else {
            "codeql"
        }
    }
}

fn resolve_repo_entry(entry: &str, cache_dir: &Path) -> Result<LocalRepo> {
    let path = Path::new(entry);
    if path.exists() {
        let full_name = path
            .file_name()
            .map(|n| format!("local/{}", n.to_string_lossy()))
            .unwrap_or_else(|| "local/repo".to_string());
        return discovery::open_local(path, &full_name);
    }
    // Treat as a clone URL; derive owner/name from the tail.
    let tail: Vec<&str> = entry.trim_end_matches(".git").rsplit('/').take(2).collect();
    let full_name = if tail.len() == 2 {
        format!("{}/{}", tail[1], tail[0])
    } else {
        format!("remote/{}", tail.first().unwrap_or(&"repo"))
    };
    let repo_ref = discovery::RepoRef {
        full_name,
        clone_url: entry.to_string(),
        stars: 0,
        size_kb: 0,
        default_branch: "main".to_string(),
        pushed_at: chrono::Utc::now(),
    };
    discovery::materialize_repository(&repo_ref, cache_dir)
}

fn scanner_available(path: &str) -> bool {
    std::process::Command::new(path)
        .arg("version")
        .output()
        .is_ok()
}

/// Write the after-version blobs of the given paths at a commit into a
/// snapshot directory, preserving relative paths.
fn write_snapshot(
    workdir: &Path,
    commit_id: &str,
    paths: &[String],
    dest: &Path,
) -> Result<()> {
    let repo = git2::Repository::open(workdir)?;
    let commit = repo.find_commit(git2::Oid::from_str(commit_id)?)?;
    let tree = commit.tree()?;
    std::fs::create_dir_all(dest).map_err(|e| Error::io(dest, e))?;
    let mut unique: Vec<&String> = paths.iter().collect();
    unique.sort();
    unique.dedup();
    for path in unique {
        let Ok(entry) = tree.get_path(Path::new(path)) else {
            continue;
        };
        let object = entry.to_object(&repo)?;
        let Some(blob) = object.as_blob() else {
            continue;
        };
        let target = dest.join(path);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&target, blob.content()).map_err(|e| Error::io(&target, e))?;
    }
    Ok(())
}

/// Designated prompt templates per testbed.
pub fn designated_templates(name: TestbedName) -> &'static [&'static str] {
    match name {
        TestbedName::RandomCut => &["P1"],
        TestbedName::WithDocString => &["P2"],
        TestbedName::FromDocString => &["P3"],
        TestbedName::FromCommit => &["P4", "P5"],
        TestbedName::SummarizationGen => &["P6"],
        TestbedName::VulnerabilitySpan
        | TestbedName::RawData
        | TestbedName::RawDataDocstring => &[],
    }
}

/// P4/P5 evaluate commit generation regardless of the testbed's own task tag.
fn template_task(template_id: &str, testbed_task: SeTask) -> SeTask {
    match template_id {
        "P4" | "P5" => SeTask::CommitGeneration,
        _ => testbed_task,
    }
}

fn export_testbed(
    testbed: &Testbed,
    out_dir: &Path,
    config_hash: &str,
    tokenizer_hash: &str,
    scanner: &str,
) -> Result<()> {
    let base = out_dir.join("testbeds");
    export_jsonl(&testbed.points, &base.join(format!("{}.jsonl", testbed.name)))?;
    let manifest = ExportManifest {
        artifact: "testbed".to_string(),
        name: testbed.name.to_string(),
        task: testbed.task.to_string(),
        seed: testbed.seed,
        config_hash: config_hash.to_string(),
        record_count: testbed.points.len() as u64,
        report: Some(testbed.report.clone()),
        empty_testbed: testbed.points.is_empty(),
        tool_versions: ToolVersions::current(tokenizer_hash, scanner),
    };
    manifest::write_json(
        &manifest,
        &base.join(format!("{}.manifest.json", testbed.name)),
    )
}

fn export_empty_testbed(
    name: TestbedName,
    out_dir: &Path,
    config_hash: &str,
    tokenizer_hash: &str,
    scanner: &str,
    master_seed: u64,
) -> Result<()> {
    let base = out_dir.join("testbeds");
    export_jsonl::<DataPoint>(&[], &base.join(format!("{name}.jsonl")))?;
    let manifest = ExportManifest {
        artifact: "testbed".to_string(),
        name: name.to_string(),
        task: name.task().to_string(),
        seed: crate::derive_seed(name.as_str(), master_seed),
        config_hash: config_hash.to_string(),
        record_count: 0,
        report: None,
        empty_testbed: true,
        tool_versions: ToolVersions::current(tokenizer_hash, scanner),
    };
    manifest::write_json(&manifest, &base.join(format!("{name}.manifest.json")))
}
