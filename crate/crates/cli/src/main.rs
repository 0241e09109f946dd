//! `poolbench` command-line front end.
//!
//! Every failure prints one line `error category=<cat> message=<text>` to
//! stderr and exits with status 2.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use poolbench::graph::{
    dataset_stats, load_edgelist_graph, load_tudataset, write_edgelist_graph, DatasetStats,
};
use poolbench::harness::{
    evaluate_checkpoint, export_embeddings, load, persist, run_experiment_on, split_for,
    split_keys, summary_csv, time_training, Dataset, ExperimentConfig, RecordAppender,
};
use poolbench::models::Checkpoint;
use poolbench::perturb::{flip_labels, Perturbation, DEFAULT_KNN_K};
use poolbench::splits::{summarize, SplitSummary};
use poolbench::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "poolbench", version, about = "Graph pooling benchmark engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (flat key = value file).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every (seed, fold) run of a config.
    Train {
        #[command(flatten)]
        common: Common,
        /// Output directory for results.jsonl, summary.csv and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Only time 200-epoch training at batch 512 for the first seed.
        #[arg(long)]
        timing: bool,
    },
    /// Evaluate a saved model on the split of its seed.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fold: Option<usize>,
        /// Also write the metrics to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Perturb an edge-list graph.
    Perturb {
        /// add, drop, mask, knn or flip.
        #[arg(long)]
        op: String,
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_KNN_K)]
        k: usize,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Output directory for edges.txt, features.csv and labels.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the index files and summary of a config's split.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print dataset statistics.
    Stats {
        #[arg(long, conflicts_with_all = ["dataset_dir", "name"])]
        config: Option<PathBuf>,
        #[arg(long, requires = "name")]
        dataset_dir: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
    },
    /// Write pre-head embeddings plus a label column as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn print_metrics<'a>(metrics: impl IntoIterator<Item = (&'a String, &'a f64)>) -> String {
    metrics
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

fn train(common: &Common, out: &Path, timing: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let data = Dataset::load(&cfg.dataset, cfg.task)?;
    fs::create_dir_all(out)?;
    if timing {
        let t = time_training(&cfg, &data)?;
        let rss = t.peak_rss_bytes.map_or("unknown".into(), |b| b.to_string());
        println!("seconds={} peak_rss_bytes={rss}", t.seconds);
        return Ok(());
    }
    let appender = RecordAppender::open(&out.join("results.jsonl"))?;
    let runs = run_experiment_on(&cfg, &data, Some(&appender))?;
    for run in &runs {
        let r = &run.record;
        let fold = r.fold.map_or("-".into(), |f| f.to_string());
        let tag = match &run.model {
            Some(model) => {
                let name = match r.fold {
                    Some(f) => format!("model-seed{}-fold{f}.json", r.seed),
                    None => format!("model-seed{}.json", r.seed),
                };
                model.checkpoint(r.seed).save(&out.join(name))?;
                "ok".to_string()
            }
            None => format!("failed ({})", r.failure.as_deref().unwrap_or("unknown")),
        };
        let test: Vec<String> = r
            .metrics
            .iter()
            .filter(|(k, _)| k.starts_with("test_"))
            .map(|(k, v)| format!("{k}={v:.4}"))
            .collect();
        println!(
            "seed={} fold={fold} status={tag} {}",
            r.seed,
            test.join(" ")
        );
    }
    let records: Vec<_> = runs.into_iter().map(|r| r.record).collect();
    persist(&records, &out.join("last_run.jsonl"))?;
    let all = load(&out.join("results.jsonl"))?;
    fs::write(out.join("summary.csv"), summary_csv(&all))?;
    Ok(())
}

fn eval(common: &Common, checkpoint: &Path, fold: Option<usize>, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let data = Dataset::load(&cfg.dataset, cfg.task)?;
    let ck = Checkpoint::load(checkpoint)?;
    let metrics = evaluate_checkpoint(&cfg, &data, ck, fold)?;
    let text = print_metrics(&metrics);
    print!("{text}");
    if let Some(path) = out {
        fs::write(path, text)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn perturb(
    op: &str,
    rate: f64,
    seed: u64,
    k: usize,
    edges: &Path,
    features: &Path,
    labels: &Path,
    out: &Path,
) -> Result<()> {
    let g = load_edgelist_graph(edges, features, labels)?;
    let p = Perturbation::parse(op, rate, k)?;
    let result = match p {
        Perturbation::FlipLabels { rate } => {
            let l = g.node_labels().expect("edge-list graphs carry labels");
            let classes = l.iter().max().map_or(0, |m| m + 1);
            g.clone()
                .with_node_labels(flip_labels(l, rate, classes, seed)?)?
        }
        other => other.apply(&g, seed)?,
    };
    fs::create_dir_all(out)?;
    write_edgelist_graph(
        &result,
        out.join("edges.txt"),
        out.join("features.csv"),
        out.join("labels.txt"),
    )?;
    println!(
        "op={} nodes={} edges_before={} edges_after={}",
        p.name(),
        result.n(),
        g.edge_count(),
        result.edge_count()
    );
    Ok(())
}

fn split(common: &Common, fold: Option<usize>, out: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let data = Dataset::load(&cfg.dataset, cfg.task)?;
    let s = split_for(&cfg, &data, cfg.seeds[0], fold)?;
    s.write_index_files(out)?;
    let summary = summarize(&s, &split_keys(&cfg, &data));
    let csv = format!("{}\n{}\n", SplitSummary::CSV_HEADER, summary.to_csv_row());
    fs::write(out.join("summary.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn stats(config: Option<&Path>, dir: Option<&Path>, name: Option<&str>) -> Result<()> {
    let graphs = match (config, dir, name) {
        (Some(path), _, _) => {
            let cfg = ExperimentConfig::from_file(path)?;
            match Dataset::load(&cfg.dataset, cfg.task)? {
                Dataset::Graphs(g) => g,
                Dataset::Nodes(g) => vec![g],
            }
        }
        (None, Some(dir), Some(name)) => load_tudataset(dir, name)?,
        _ => {
            return Err(Error::Config(
                "stats needs --config or --dataset-dir with --name".into(),
            ))
        }
    };
    let s = dataset_stats(&graphs)?;
    println!("{}\n{}", DatasetStats::CSV_HEADER, s.to_csv_row());
    Ok(())
}

fn export(common: &Common, checkpoint: &Path, out: &Path) -> Result<()> {
    let (rows, cols) = export_embeddings(&load_config(common)?, checkpoint, out)?;
    println!("rows={rows} cols={cols}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            out,
            timing,
        } => train(&common, &out, timing),
        Command::Eval {
            common,
            checkpoint,
            fold,
            out,
        } => eval(&common, &checkpoint, fold, out.as_deref()),
        Command::Perturb {
            op,
            rate,
            seed,
            k,
            edges,
            features,
            labels,
            out,
        } => perturb(&op, rate, seed, k, &edges, &features, &labels, &out),
        Command::Split { common, fold, out } => split(&common, fold, &out),
        Command::Stats {
            config,
            dataset_dir,
            name,
        } => stats(config.as_deref(), dataset_dir.as_deref(), name.as_deref()),
        Command::ExportEmbeddings {
            common,
            checkpoint,
            out,
        } => export(&common, &checkpoint, &out),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("error category=usage message={}", one_line(&e.to_string()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error category={} message={}",
                e.category(),
                one_line(&e.to_string())
            );
            ExitCode::from(2)
        }
    }
}
