//! snipforge CLI: discover, mine, enrich, curate, scan, testbed, prompts,
//! export, all. Exit codes: 0 success, 2 partial (a stage was skipped), 1
//! failure.

use clap::{Parser, Subcommand};
use snipforge::config::Config;
use snipforge::discovery::RepoQuery;
use snipforge::mining::TimeWindow;
use snipforge::pipeline::Pipeline;
use snipforge::testbed::TestbedName;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "snipforge", version, about = "Mine contamination-safe code testbeds and prompt datasets")]
struct Cli {
    /// Pipeline configuration file (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the store path from the config.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Override the output directory from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search the code host and materialize matching repositories.
    Discover {
        /// Repo query file (TOML or JSON) overriding the config's query.
        #[arg(long)]
        query_config: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Cap on the number of repositories.
        #[arg(long)]
        max_repos: Option<u32>,
    },
    /// Extract new methods from in-window commits.
    Mine {
        /// Commit window, e.g. 2022-01-01..2023-01-01.
        #[arg(long)]
        window: Option<String>,
        /// Comma-separated repository list (local paths or clone URLs).
        #[arg(long, value_delimiter = ',')]
        repos: Vec<String>,
    },
    /// Compute feature dimensions for mined snippets.
    Enrich,
    /// Dedup, validate, and sample for manual review.
    Curate {
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        review_sample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the vulnerability scanner and map findings to snippets.
    Scan,
    /// Build and export testbeds.
    Testbed {
        /// Testbed name; repeatable. All eight when omitted.
        #[arg(long = "name")]
        names: Vec<String>,
        #[arg(long)]
        max_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Cut position strategy: random or first-line.
        #[arg(long, default_value = "random")]
        cut_mode: String,
    },
    /// Render prompt datasets for built testbeds.
    Prompts {
        /// Testbed name; repeatable.
        #[arg(long = "testbed")]
        testbeds: Vec<String>,
        /// Template spec like P1 or P1+P8; repeatable. Designated templates
        /// per testbed when omitted.
        #[arg(long = "templates")]
        templates: Vec<String>,
    },
    /// Re-export a stored artifact: testbed:<Name> or prompts:<Name>.
    Export {
        artifact: String,
        #[arg(long, default_value = "jsonl")]
        format: String,
    },
    /// Full pipeline: discover through prompts, plus the run manifest.
    All,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(partial) => {
            if partial {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn parse_testbed_names(names: &[String]) -> snipforge::Result<Vec<TestbedName>> {
    if names.is_empty() {
        return Ok(TestbedName::ALL.to_vec());
    }
    names.iter().map(|n| n.parse()).collect()
}

fn run() -> snipforge::Result<bool> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(store) = cli.store {
        config.store_path = store;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }

    match cli.command {
        Command::Discover {
            query_config,
            cache_dir,
            max_repos,
        } => {
            if let Some(path) = query_config {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| snipforge::Error::io(&path, e))?;
                config.query = if path.extension().is_some_and(|e| e == "json") {
                    serde_json::from_str::<RepoQuery>(&text)?
                } else {
                    toml::from_str(&text).map_err(|e| {
                        snipforge::Error::InvalidConfig(format!("{}: {e}", path.display()))
                    })?
                };
            }
            if let Some(dir) = cache_dir {
                config.cache_dir = dir;
            }
            if let Some(n) = max_repos {
                config.query.max_results = n;
            }
            let mut pipeline = Pipeline::open(config)?;
            let repos = pipeline.discover()?;
            for repo in &repos {
                println!("{}\t{}", repo.full_name, repo.workdir.display());
            }
            Ok(false)
        }
        Command::Mine { window, repos } => {
            if let Some(window) = window {
                config.window = window.parse::<TimeWindow>()?;
            }
            if !repos.is_empty() {
                config.repos = repos;
            }
            let mut pipeline = Pipeline::open(config)?;
            let local = pipeline.discover()?;
            let mined = pipeline.mine(&local)?;
            println!("mined {mined} new methods");
            Ok(false)
        }
        Command::Enrich => {
            let mut pipeline = Pipeline::open(config)?;
            let enriched = pipeline.enrich()?;
            println!("enriched {enriched} data points");
            Ok(false)
        }
        Command::Curate {
            threshold,
            review_sample,
            seed,
        } => {
            if let Some(t) = threshold {
                config.thresholds.near_dup = t;
            }
            if let Some(n) = review_sample {
                config.thresholds.review_sample = n;
            }
            if let Some(s) = seed {
                config.master_seed = s;
            }
            let mut pipeline = Pipeline::open(config)?;
            let report = pipeline.curate()?;
            println!(
                "curated: {} in, {} exact dupes, {} near dupes ({:.2}% duplicates)",
                report.input_count,
                report.exact_removed,
                report.near_removed,
                report.duplicate_pct
            );
            Ok(false)
        }
        Command::Scan => {
            let mut pipeline = Pipeline::open(config)?;
            let repos = pipeline.discover()?;
            let outcome = pipeline.scan(&repos)?;
            match outcome {
                snipforge::pipeline::StageOutcome::Completed => {
                    println!("scan complete");
                    Ok(false)
                }
                snipforge::pipeline::StageOutcome::Skipped(reason) => {
                    println!("scan skipped: {reason}");
                    Ok(true)
                }
            }
        }
        Command::Testbed {
            names,
            max_size,
            seed,
            cut_mode,
        } => {
            if let Some(n) = max_size {
                config.thresholds.testbed_max_size = n;
            }
            if let Some(s) = seed {
                config.master_seed = s;
            }
            let cut_mode = cut_mode.parse()?;
            let names = parse_testbed_names(&names)?;
            let mut pipeline = Pipeline::open(config)?;
            let mut cfg = pipeline.config.testbed_config();
            cfg.cut_mode = cut_mode;
            let built = pipeline.build_testbeds_with(&names, cfg)?;
            for testbed in &built {
                println!(
                    "{}\t{} points\t{:.2}% duplicates",
                    testbed.name,
                    testbed.points.len(),
                    testbed.report.duplicate_pct
                );
            }
            Ok(false)
        }
        Command::Prompts {
            testbeds,
            templates,
        } => {
            let names = parse_testbed_names(&testbeds)?;
            let mut pipeline = Pipeline::open(config)?;
            let rendered = pipeline.render_prompts(&names, &templates)?;
            for (name, records) in &rendered {
                println!("{name}\t{} prompt records", records.len());
            }
            Ok(false)
        }
        Command::Export { artifact, format } => {
            if format != "jsonl" {
                return Err(snipforge::Error::InvalidConfig(format!(
                    "unsupported export format {format:?}"
                )));
            }
            let mut pipeline = Pipeline::open(config)?;
            let path = pipeline.export(&artifact)?;
            println!("{}", path.display());
            Ok(false)
        }
        Command::All => {
            let mut pipeline = Pipeline::open(config)?;
            let manifest = pipeline.run_all()?;
            println!(
                "run {}: mined {}, enriched {}, kept {}, validated {}",
                manifest.run_id,
                manifest.counts.mined,
                manifest.counts.enriched,
                manifest.counts.kept,
                manifest.counts.validated
            );
            if !manifest.skipped_stages.is_empty() {
                for (stage, reason) in &manifest.skipped_stages {
                    println!("stage {stage} skipped: {reason}");
                }
                return Ok(true);
            }
            Ok(false)
        }
    }
}
