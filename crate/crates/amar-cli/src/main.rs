//! Command-line workflows: build the knowledge graph and index, plan, ask,
//! run benchmark batches, evaluate, and inspect datasets.
//!
//! All commands read one config file (default `./amar.json`; built-in
//! defaults apply when that file does not exist) with a few flag overrides,
//! and exit non-zero with a single-line JSON error on failure. Exit codes:
//! 1 config, 2 I/O, 3 backend, 4 validation.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::json;

use amar_core::backend::BackendSet;
use amar_core::benchmark::{
    compute_stats, construct_qa, load_dataset, save_dataset, FilterThresholds, QaConstraints,
};
use amar_core::config::EngineConfig;
use amar_core::error::{AmarError, Result};
use amar_core::eval::{aggregate, judge, render_table, EvaluationRow, OverlapScores};
use amar_core::generation::{run_batch, run_pipeline, PipelineMode, RunRecord};
use amar_core::graph::KnowledgeGraph;
use amar_core::index::VectorIndex;
use amar_core::ingest::{ingest_corpus, load_corpus};
use amar_core::planner::{derive_retrieval_intent, generate_plan, ArtworkRecord};

#[derive(Parser)]
#[command(name = "amar", version, about = "Artwork reasoning engine", disable_help_subcommand = true)]
struct Cli {
    /// Config file; built-in defaults apply when the default path is absent.
    #[arg(long, global = true, default_value = "./amar.json")]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the coarse retrieval budget.
    #[arg(long, global = true)]
    k_coarse: Option<usize>,
    /// Override the fine retrieval budget.
    #[arg(long, global = true)]
    m_fine: Option<usize>,
    /// Override the fusion weight.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk a corpus, extract entities and relations, merge, deduplicate.
    Ingest {
        /// Directory of .txt files or a JSON Lines manifest of {doc_id, text}.
        corpus: PathBuf,
        /// Output graph file.
        out_graph: PathBuf,
    },
    /// Build and save the vector index over a graph.
    Index {
        graph: PathBuf,
        out_index: PathBuf,
    },
    /// Generate a reasoning plan and its retrieval intent.
    Plan {
        /// Artwork record as a JSON file.
        artwork: PathBuf,
        question: String,
        /// Plan without the image.
        #[arg(long)]
        text_only: bool,
    },
    /// Run one pipeline execution and write its run record.
    Ask {
        artwork: PathBuf,
        question: String,
        #[arg(long, default_value = "amar")]
        mode: String,
    },
    /// Run a dataset through one or more modes.
    Bench {
        dataset: PathBuf,
        /// Comma-separated mode labels.
        #[arg(long, default_value = "amar")]
        modes: String,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
    /// Score runs against a dataset: overlap metrics, judge, aggregate.
    Evaluate {
        dataset: PathBuf,
        runs_dir: PathBuf,
        /// Report file; defaults to <runs_dir>/report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print dataset statistics.
    Stats { dataset: PathBuf },
    /// Filter painting records and construct benchmark items.
    ConstructQa {
        /// JSON Lines of artwork records.
        records: PathBuf,
        out_dataset: PathBuf,
        /// Minimum description length (words) for the painting filter.
        #[arg(long, default_value_t = 100)]
        min_desc_words: usize,
    },
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            let first_line = e.to_string().lines().next().unwrap_or("usage error").to_string();
            eprintln!("{}", json!({ "error": first_line, "category": "config", "code": 1 }));
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli) {
        let category = e.category();
        eprintln!(
            "{}",
            json!({
                "error": e.to_string(),
                "category": category.label(),
                "code": category.exit_code(),
            })
        );
        std::process::exit(category.exit_code());
    }
}

fn load_config(cli: &Cli) -> Result<EngineConfig> {
    let mut config = if cli.config.exists() {
        EngineConfig::load(&cli.config)?
    } else if cli.config == Path::new("./amar.json") {
        EngineConfig::default()
    } else {
        return Err(AmarError::io(
            &cli.config,
            std::io::Error::new(std::io::ErrorKind::NotFound, "config file not found"),
        ));
    };
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(k) = cli.k_coarse {
        config.retrieval.k_coarse = k;
    }
    if let Some(m) = cli.m_fine {
        config.retrieval.m_fine = m;
    }
    if let Some(lambda) = cli.lambda {
        config.retrieval.lambda = lambda;
    }
    config.validate()?;
    Ok(config)
}

fn backends_for(config: &EngineConfig) -> Result<BackendSet> {
    BackendSet::from_config(&config.backends, config.seed, config.paths.cache.as_deref())
}

fn read_artwork(path: &Path) -> Result<ArtworkRecord> {
    let raw = std::fs::read_to_string(path).map_err(|e| AmarError::io(path, e))?;
    let artwork: ArtworkRecord =
        serde_json::from_str(&raw).map_err(|e| AmarError::MalformedFile {
            path: path.to_path_buf(),
            line: 1,
            detail: e.to_string(),
        })?;
    artwork.validate()?;
    Ok(artwork)
}

fn read_artworks(path: &Path) -> Result<Vec<ArtworkRecord>> {
    let file = File::open(path).map_err(|e| AmarError::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AmarError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ArtworkRecord =
            serde_json::from_str(&line).map_err(|e| AmarError::MalformedFile {
                path: path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

fn write_record(record: &RunRecord, runs_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(runs_dir).map_err(|e| AmarError::io(runs_dir, e))?;
    let path = runs_dir.join(format!("{}.json", record.run_id));
    let rendered = serde_json::to_string_pretty(record).expect("record serializes");
    std::fs::write(&path, rendered + "\n").map_err(|e| AmarError::io(&path, e))?;
    Ok(path)
}

fn parse_modes(spec: &str) -> Result<Vec<PipelineMode>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(PipelineMode::parse)
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Ingest { corpus, out_graph } => {
            let backends = backends_for(&config)?;
            let docs = load_corpus(corpus)?;
            let mut graph = KnowledgeGraph::new();
            let mut stats = ingest_corpus(
                &docs,
                &mut graph,
                backends.planner.as_ref(),
                config.ingest.window,
                config.ingest.overlap,
            )?;
            let report = graph.merge_duplicates(config.ingest.dedup_threshold)?;
            stats.merged_duplicates = report.len();
            graph.save(out_graph)?;
            println!("{}", serde_json::to_string(&stats).expect("stats serialize"));
        }
        Command::Index { graph, out_index } => {
            let backends = backends_for(&config)?;
            let graph = KnowledgeGraph::load(graph)?;
            let index = VectorIndex::build(&graph, backends.embedder.as_ref())?;
            index.save(out_index)?;
            println!(
                "{}",
                json!({ "entries": index.len(), "dimension": index.dimension() })
            );
        }
        Command::Plan {
            artwork,
            question,
            text_only,
        } => {
            let backends = backends_for(&config)?;
            let artwork = read_artwork(artwork)?;
            let (plan, _) =
                generate_plan(&artwork, question, backends.planner.as_ref(), !text_only)?;
            let intent = derive_retrieval_intent(&plan, &artwork);
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({ "plan": plan, "intent": intent }))
                    .expect("plan serializes")
            );
        }
        Command::Ask {
            artwork,
            question,
            mode,
        } => {
            let mode = PipelineMode::parse(mode)?;
            let backends = backends_for(&config)?;
            let artwork = read_artwork(artwork)?;
            let (graph, index) = if mode.uses_retrieval() {
                (
                    Some(KnowledgeGraph::load(&config.paths.graph)?),
                    Some(VectorIndex::load(&config.paths.index)?),
                )
            } else {
                (None, None)
            };
            let record = run_pipeline(
                &artwork,
                question,
                graph.as_ref(),
                index.as_ref(),
                &config,
                mode,
                &backends,
            )?;
            let path = write_record(&record, &config.paths.runs)?;
            println!(
                "{}",
                json!({ "run_id": record.run_id, "file": path.display().to_string() })
            );
        }
        Command::Bench {
            dataset,
            modes,
            parallelism,
        } => {
            let modes = parse_modes(modes)?;
            if modes.is_empty() {
                return Err(AmarError::Invalid("no modes requested".into()));
            }
            let backends = backends_for(&config)?;
            let items = load_dataset(dataset)?;
            let pairs: Vec<(ArtworkRecord, String)> = items
                .iter()
                .map(|item| (item.artwork(), item.question.clone()))
                .collect();
            let needs_retrieval = modes.iter().any(|m| m.uses_retrieval());
            let (graph, index) = if needs_retrieval {
                (
                    Some(KnowledgeGraph::load(&config.paths.graph)?),
                    Some(VectorIndex::load(&config.paths.index)?),
                )
            } else {
                (None, None)
            };
            std::fs::create_dir_all(&config.paths.runs)
                .map_err(|e| AmarError::io(&config.paths.runs, e))?;
            let manifest_path = config.paths.runs.join("manifest.jsonl");
            let mut manifest_lines = Vec::new();
            let mut total_records = 0usize;
            let mut total_failures = 0usize;
            for mode in modes {
                let outcome = run_batch(
                    &pairs,
                    graph.as_ref(),
                    index.as_ref(),
                    &config,
                    mode,
                    &backends,
                    *parallelism,
                )?;
                for record in &outcome.records {
                    let path = write_record(record, &config.paths.runs)?;
                    manifest_lines.push(
                        json!({
                            "painting_id": record.artwork.painting_id,
                            "mode": mode.label(),
                            "status": "ok",
                            "run_id": record.run_id,
                            "file": path.display().to_string(),
                        })
                        .to_string(),
                    );
                }
                for failure in &outcome.failures {
                    manifest_lines.push(
                        json!({
                            "painting_id": failure.painting_id,
                            "mode": mode.label(),
                            "status": "failed",
                            "index": failure.index,
                            "error": failure.error,
                        })
                        .to_string(),
                    );
                }
                total_records += outcome.records.len();
                total_failures += outcome.failures.len();
            }
            std::fs::write(&manifest_path, manifest_lines.join("\n") + "\n")
                .map_err(|e| AmarError::io(&manifest_path, e))?;
            println!(
                "{}",
                json!({
                    "records": total_records,
                    "failures": total_failures,
                    "manifest": manifest_path.display().to_string(),
                })
            );
        }
        Command::Evaluate {
            dataset,
            runs_dir,
            out,
        } => {
            let backends = backends_for(&config)?;
            let items = load_dataset(dataset)?;
            let records = read_runs(runs_dir)?;
            let mut rows = Vec::new();
            let mut skipped = 0usize;
            for record in &records {
                let Some(item) = items.iter().find(|item| {
                    item.painting_id == record.artwork.painting_id
                        && item.question == record.question
                }) else {
                    log::warn!("run {} matches no dataset item, skipped", record.run_id);
                    skipped += 1;
                    continue;
                };
                let overlap = match OverlapScores::compute(
                    &record.answer.final_text,
                    std::slice::from_ref(&item.reference_answer),
                ) {
                    Ok(overlap) => overlap,
                    Err(e) => {
                        log::warn!("run {}: overlap metrics failed: {e}", record.run_id);
                        skipped += 1;
                        continue;
                    }
                };
                let (scores, prompts) = judge(item, record, backends.judge.as_ref())?;
                rows.push(EvaluationRow {
                    item_id: item.painting_id.clone(),
                    mode: record.mode,
                    overlap,
                    judge: scores,
                    judge_prompts: prompts,
                });
            }
            let report = aggregate(rows, backends.judge.model_id())?;
            let out = out.clone().unwrap_or_else(|| runs_dir.join("report.json"));
            let rendered = serde_json::to_string_pretty(&report).expect("report serializes");
            std::fs::write(&out, rendered + "\n").map_err(|e| AmarError::io(&out, e))?;
            print!("{}", render_table(&report));
            if skipped > 0 {
                log::warn!("{skipped} runs skipped");
            }
        }
        Command::Stats { dataset } => {
            let items = load_dataset(dataset)?;
            let stats = compute_stats(&items)?;
            println!("{}", serde_json::to_string(&stats).expect("stats serialize"));
        }
        Command::ConstructQa {
            records,
            out_dataset,
            min_desc_words,
        } => {
            let backends = backends_for(&config)?;
            let records = read_artworks(records)?;
            let thresholds = FilterThresholds {
                min_desc_words: *min_desc_words,
                ..FilterThresholds::default()
            };
            let constraints = QaConstraints::default();
            let mut items = Vec::new();
            let mut failed = 0usize;
            let mut filtered_out = 0usize;
            for record in &records {
                if !amar_core::benchmark::passes_filter(record, &thresholds) {
                    filtered_out += 1;
                    continue;
                }
                match construct_qa(record, backends.generator.as_ref(), &constraints, &thresholds)
                {
                    Ok(item) => items.push(item),
                    Err(e) => {
                        log::warn!("{}: {e}", record.painting_id);
                        failed += 1;
                    }
                }
            }
            save_dataset(&items, out_dataset)?;
            println!(
                "{}",
                json!({
                    "input": records.len(),
                    "filtered_out": filtered_out,
                    "constructed": items.len(),
                    "failed": failed,
                })
            );
        }
    }
    Ok(())
}

fn read_runs(runs_dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(runs_dir)
        .map_err(|e| AmarError::io(runs_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .filter(|p| p.file_name().is_some_and(|n| n != "report.json"))
        .collect();
    paths.sort();
    let mut records = Vec::new();
    for path in paths {
        let raw = std::fs::read_to_string(&path).map_err(|e| AmarError::io(&path, e))?;
        let record: RunRecord =
            serde_json::from_str(&raw).map_err(|e| AmarError::MalformedFile {
                path: path.clone(),
                line: 1,
                detail: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}
