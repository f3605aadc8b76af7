use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use psieve::aggregate::{aggregate_curve, read_results_csv, write_aggregate_csv};
use psieve::classifier::{evaluate, load_model, save_model, train, TrainConfig};
use psieve::corpus_io::{read_all, read_documents, ChunkManifest, ChunkWriter, Document, InputFormat};
use psieve::features::FeatureConfig;
use psieve::filter::{filter_stream, sweep, write_stats_csv, FilterPolicy};
use psieve::probe::composition_curve;
use psieve::rng::{derive_seed, keyed_unit};
use psieve::synth::{goodhart_experiment, ExperimentConfig, SynthSpec, DEFAULT_ALPHAS};

#[derive(Parser)]
#[command(name = "psieve", version, about = "Pareto-thresholded quality filtering for text corpora")]
struct Cli {
    #[command(flatten)]
    global: GlobalOptions,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOptions {
    /// Seed for every random decision (default 0; `synth` falls back to the spec's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Args)]
struct InputArgs {
    /// Input files (or directories for txt-dir).
    #[arg(long = "in", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,

    /// jsonl, txt or txt-dir.
    #[arg(long, default_value = "jsonl")]
    format: InputFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Train a positive-vs-negative quality classifier.
    Train {
        #[arg(long, num_args = 1.., required = true)]
        pos: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        neg: Vec<PathBuf>,
        #[arg(long, default_value = "jsonl")]
        format: InputFormat,
        #[arg(long, default_value_t = 2)]
        ngram: u32,
        #[arg(long, default_value_t = 1 << 20)]
        buckets: u64,
        #[arg(long, default_value_t = 5)]
        epochs: u32,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        /// Fraction of each class held out for evaluation.
        #[arg(long)]
        holdout: Option<f64>,
        #[arg(long, default_value = "positive")]
        pos_label: String,
        #[arg(long, default_value = "negative")]
        neg_label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter documents and write byte-budgeted chunks.
    Filter {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        target_bytes: u64,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Discard fractions over a list of alphas.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "1,2,3,4,5,8")]
        alphas: Vec<f64>,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Domain composition of filtered sets.
    Probe {
        #[arg(long)]
        quality_model: PathBuf,
        #[arg(long)]
        domain_model: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "1,2,3,4,5,8")]
        alphas: Vec<f64>,
        /// Label for the domain column (default: the probe's positive label).
        #[arg(long)]
        domain_label: Option<String>,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate per-task results into mean accuracy with standard error.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the synthetic over-filtering experiment.
    Synth {
        /// SynthSpec JSON; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        alphas: Option<Vec<f64>>,
        /// Training documents per class for the proxy and the probe.
        #[arg(long, default_value_t = 5000)]
        train_docs: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn split_holdout(docs: Vec<Document>, fraction: f64, seed: u64) -> (Vec<Document>, Vec<Document>) {
    docs.into_iter().partition(|d| keyed_unit(seed, d.id) >= fraction)
}

fn write_manifest(manifest: &ChunkManifest, out_dir: &Path) -> Result<()> {
    let mut relative = manifest.clone();
    for p in &mut relative.chunk_paths {
        if let Ok(stripped) = p.strip_prefix(out_dir) {
            *p = stripped.to_path_buf();
        }
    }
    let path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&relative)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.global.seed.unwrap_or(0);
    match cli.command {
        Command::Train {
            pos,
            neg,
            format,
            ngram,
            buckets,
            epochs,
            lr,
            holdout,
            pos_label,
            neg_label,
            out,
        } => {
            let tc = TrainConfig {
                epochs,
                learning_rate: lr,
                seed,
                features: FeatureConfig::new(ngram, buckets)?,
            };
            tc.validate()?;
            let positives = read_all(&pos, format)?;
            let negatives = read_all(&neg, format)?;
            let (train_pos, test_pos, train_neg, test_neg) = match holdout {
                Some(f) => {
                    if !(0.0..1.0).contains(&f) {
                        bail!("--holdout must lie in [0, 1)");
                    }
                    let (a, b) = split_holdout(positives, f, derive_seed(seed, 1));
                    let (c, d) = split_holdout(negatives, f, derive_seed(seed, 2));
                    (a, b, c, d)
                }
                None => (positives, Vec::new(), negatives, Vec::new()),
            };
            info!("training on {} positive and {} negative documents", train_pos.len(), train_neg.len());
            let model = train(&train_pos, &train_neg, &tc)?.with_labels(pos_label, neg_label);
            save_model(&model, &out)?;
            if holdout.is_some() {
                if test_pos.is_empty() && test_neg.is_empty() {
                    bail!("holdout split is empty; use a larger --holdout");
                }
                let ev = evaluate(&model, &test_pos, &test_neg)?;
                println!("holdout_accuracy={:.4}", ev.accuracy);
                println!("holdout_n={}", ev.n);
            }
        }
        Command::Filter {
            model,
            alpha,
            target_bytes,
            input,
            out,
        } => {
            let policy = FilterPolicy::new(alpha, seed)?;
            let model = load_model(&model)?;
            let mut writer = ChunkWriter::new(&out, target_bytes)?;
            let docs = read_documents(&input.inputs, input.format);
            let stats = filter_stream(docs, &model, &policy, |d| writer.push(&d))?;
            let manifest = writer.finish()?;
            write_manifest(&manifest, &out)?;
            write_stats_csv(create(&out.join("stats.csv"))?, alpha, &stats)?;
            println!(
                "n_seen={} n_kept={} fraction_discarded_docs={:.4} chunks={}",
                stats.n_seen,
                stats.n_kept,
                stats.fraction_discarded_docs,
                manifest.chunk_paths.len()
            );
        }
        Command::Sweep {
            model,
            alphas,
            input,
            out,
        } => {
            let model = load_model(&model)?;
            let docs = read_all(&input.inputs, input.format)?;
            let report = sweep(&docs, &model, &alphas, seed)?;
            report.write_csv(create(&out)?)?;
        }
        Command::Probe {
            quality_model,
            domain_model,
            alphas,
            domain_label,
            input,
            out,
        } => {
            let quality = load_model(&quality_model)?;
            let domain = load_model(&domain_model)?;
            let docs = read_all(&input.inputs, input.format)?;
            let mut curve = composition_curve(&docs, &quality, &domain, &alphas, seed)?;
            if let Some(label) = domain_label {
                curve.domain_label = label;
            }
            curve.write_csv(create(&out)?)?;
        }
        Command::Aggregate { input, out } => {
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let rows = read_results_csv(file).with_context(|| format!("reading {}", input.display()))?;
            let curve = aggregate_curve(&rows)?;
            write_aggregate_csv(create(&out)?, &curve)?;
        }
        Command::Synth {
            spec,
            alphas,
            train_docs,
            out,
        } => {
            let mut spec = match spec {
                Some(path) => SynthSpec::from_json_file(&path)?,
                None => SynthSpec::default(),
            };
            if let Some(s) = cli.global.seed {
                spec.seed = s;
            }
            let mut alphas = alphas.unwrap_or_else(|| DEFAULT_ALPHAS.to_vec());
            if !alphas.contains(&0.0) {
                alphas.push(0.0);
            }
            let cfg = ExperimentConfig {
                alphas,
                train_docs_per_class: train_docs,
                ..ExperimentConfig::default()
            };
            let report = goodhart_experiment(&spec, &cfg)?;
            report.write_csvs(&out)?;
            println!("proxy_accuracy={:.4}", report.proxy_train_accuracy);
            println!("probe_accuracy={:.4}", report.probe_train_accuracy);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.global.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .init();
    if let Some(workers) = cli.global.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers as usize)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
