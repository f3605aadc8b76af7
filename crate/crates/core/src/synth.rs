//! Synthetic corpora with a known latent quality, and the experiment that
//! runs the whole filtering pipeline over them.
//!
//! Three populations share the corpus:
//!
//! * `Ref`: good text in the reference style (style tokens `r*` plus quality
//!   tokens `q*`),
//! * `Min`: equally good text in a minority style (`m*` plus `q*`),
//! * `Junk`: noise tokens `n*` only.
//!
//! The quality proxy is trained with `Ref` as the positive class against a
//! raw mixed sample, the same construction as a reference-corpus-vs-web
//! classifier. Because `Min` only ever shows up on the negative side, the
//! proxy learns to penalize the minority style as well as the junk, and
//! aggressive filtering ends up trading diversity for apparent quality.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{write_results_csv, TaskResult};
use crate::classifier::{evaluate, train, LinearModel, TrainConfig};
use crate::corpus_io::Document;
use crate::error::{Error, Result};
use crate::filter::score_all;
use crate::probe::{probe_reading, survivor_mask};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Population {
    Ref,
    Min,
    Junk,
}

impl Population {
    pub fn true_quality(self) -> u8 {
        match self {
            Population::Ref | Population::Min => 1,
            Population::Junk => 0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Population::Ref => "ref",
            Population::Min => "min",
            Population::Junk => "junk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mix {
    pub ref_quality: f64,
    pub minority_quality: f64,
    pub junk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSizes {
    pub ref_style: usize,
    pub min_style: usize,
    pub quality: usize,
    pub noise: usize,
}

impl Default for VocabSizes {
    fn default() -> Self {
        VocabSizes {
            ref_style: 500,
            min_style: 500,
            quality: 200,
            noise: 2000,
        }
    }
}

/// Generator parameters; the JSON form uses the same field names and every
/// field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_docs: usize,
    pub mix: Mix,
    pub doc_len: usize,
    pub vocab: VocabSizes,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_docs: 20_000,
            mix: Mix {
                ref_quality: 0.3,
                minority_quality: 0.2,
                junk: 0.5,
            },
            doc_len: 50,
            vocab: VocabSizes::default(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let m = &self.mix;
        let parts = [m.ref_quality, m.minority_quality, m.junk];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("mix proportions must lie in [0, 1]"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mix proportions must sum to 1"));
        }
        if self.n_docs < 1 {
            return Err(Error::invalid("n_docs must be >= 1"));
        }
        let v = &self.vocab;
        if [v.ref_style, v.min_style, v.quality, v.noise].contains(&0) {
            return Err(Error::invalid("vocabulary sizes must be >= 1"));
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDocument {
    pub doc: Document,
    pub population: Population,
}

impl SynthDocument {
    pub fn true_quality(&self) -> u8 {
        self.population.true_quality()
    }
}

// Sub-key tags, one per independent random stream.
const STREAM_CORPUS: u64 = 0;
const STREAM_PROXY_POS: u64 = 1;
const STREAM_PROXY_NEG: u64 = 2;
const STREAM_PROBE_POS: u64 = 3;
const STREAM_PROBE_NEG: u64 = 4;
const STREAM_FILTER: u64 = 5;

fn draw_population(mix: &Mix, u: f64) -> Population {
    if u < mix.ref_quality {
        Population::Ref
    } else if u < mix.ref_quality + mix.minority_quality {
        Population::Min
    } else {
        Population::Junk
    }
}

fn draw_text(rng: &mut ChaCha8Rng, population: Population, spec: &SynthSpec) -> String {
    let v = &spec.vocab;
    let (style_prefix, style_size) = match population {
        Population::Ref => ("r", v.ref_style),
        Population::Min => ("m", v.min_style),
        Population::Junk => ("n", v.noise),
    };
    let pool = match population {
        Population::Junk => style_size,
        _ => style_size + v.quality,
    };
    let mut text = String::with_capacity(spec.doc_len * 5);
    for i in 0..spec.doc_len {
        if i > 0 {
            text.push(' ');
        }
        let k = rng.gen_range(0..pool);
        if k < style_size {
            text.push_str(style_prefix);
            text.push_str(&k.to_string());
        } else {
            text.push('q');
            text.push_str(&(k - style_size).to_string());
        }
    }
    text
}

fn generate_stream(spec: &SynthSpec, stream: u64, n: usize, only: Option<Population>) -> Vec<SynthDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, stream));
    (0..n)
        .map(|i| {
            let population = only.unwrap_or_else(|| draw_population(&spec.mix, rng.gen::<f64>()));
            let text = draw_text(&mut rng, population, spec);
            SynthDocument {
                doc: Document::new(i as u64, text, population.label()),
                population,
            }
        })
        .collect()
}

/// Draws `spec.n_docs` documents; deterministic in `spec.seed`.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<SynthDocument>> {
    spec.validate()?;
    Ok(generate_stream(spec, STREAM_CORPUS, spec.n_docs, None))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Must contain 0, the unfiltered baseline.
    pub alphas: Vec<f64>,
    /// Documents per class for both the proxy and the probe.
    pub train_docs_per_class: usize,
    pub train: TrainConfig,
}

/// Default α grid: 1, 2, 3, 4, 5, 8 plus 0, 6, 7 for resolution.
pub const DEFAULT_ALPHAS: [f64; 9] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            alphas: DEFAULT_ALPHAS.to_vec(),
            train_docs_per_class: 5_000,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentPoint {
    pub alpha: f64,
    pub discard_fraction: f64,
    pub n_survivors: u64,
    /// Survivor-level fields are `None` when nothing survives.
    pub mean_true_quality: Option<f64>,
    pub latent_min_fraction: Option<f64>,
    pub probe_mean_domain_prob: Option<f64>,
    pub probe_frac_classified_domain: Option<f64>,
    /// Share of `Min` among surviving good documents.
    pub min_share_of_quality: Option<f64>,
    pub normalized_entropy: Option<f64>,
    /// Mean true quality times the normalized Ref/Min entropy.
    pub composite: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub points: Vec<ExperimentPoint>,
    pub proxy_train_accuracy: f64,
    pub probe_train_accuracy: f64,
}

/// Binary entropy in bits; 1 at p = 0.5, 0 at the endpoints.
pub fn normalized_binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

fn docs_of(sample: &[SynthDocument]) -> Vec<Document> {
    sample.iter().map(|s| s.doc.clone()).collect()
}

/// Trains the quality proxy (Ref vs raw mixed sample).
pub fn train_quality_proxy(spec: &SynthSpec, cfg: &ExperimentConfig) -> Result<LinearModel> {
    let pos = docs_of(&generate_stream(spec, STREAM_PROXY_POS, cfg.train_docs_per_class, Some(Population::Ref)));
    let neg = docs_of(&generate_stream(spec, STREAM_PROXY_NEG, cfg.train_docs_per_class, None));
    Ok(train(&pos, &neg, &cfg.train)?.with_labels("ref", "raw"))
}

/// Trains the domain probe (Min vs Ref).
pub fn train_domain_probe(spec: &SynthSpec, cfg: &ExperimentConfig) -> Result<LinearModel> {
    let pos = docs_of(&generate_stream(spec, STREAM_PROBE_POS, cfg.train_docs_per_class, Some(Population::Min)));
    let neg = docs_of(&generate_stream(spec, STREAM_PROBE_NEG, cfg.train_docs_per_class, Some(Population::Ref)));
    Ok(train(&pos, &neg, &cfg.train)?.with_labels("minority", "ref"))
}

/// Runs the pipeline on a fresh synthetic corpus and measures survivors at
/// every α.
pub fn goodhart_experiment(spec: &SynthSpec, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    spec.validate()?;
    if !cfg.alphas.contains(&0.0) {
        return Err(Error::invalid("the alpha grid must include 0 (unfiltered baseline)"));
    }
    if cfg.train_docs_per_class == 0 {
        return Err(Error::invalid("train_docs_per_class must be >= 1"));
    }
    let mut alphas = cfg.alphas.clone();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();

    let corpus = generate_corpus(spec)?;
    let docs = docs_of(&corpus);
    let proxy = train_quality_proxy(spec, cfg)?;
    let probe = train_domain_probe(spec, cfg)?;

    let by_pop = |p: Population| -> Vec<Document> {
        corpus.iter().filter(|s| s.population == p).map(|s| s.doc.clone()).collect()
    };
    let (refs, mins, junk) = (by_pop(Population::Ref), by_pop(Population::Min), by_pop(Population::Junk));
    let proxy_neg: Vec<Document> = mins.iter().chain(&junk).cloned().collect();
    let proxy_train_accuracy = if refs.is_empty() && proxy_neg.is_empty() {
        f64::NAN
    } else {
        evaluate(&proxy, &refs, &proxy_neg)?.accuracy
    };
    let probe_train_accuracy = if refs.is_empty() && mins.is_empty() {
        f64::NAN
    } else {
        evaluate(&probe, &mins, &refs)?.accuracy
    };
    info!("proxy accuracy (ref vs rest) {proxy_train_accuracy:.4}, probe accuracy (min vs ref) {probe_train_accuracy:.4}");

    let quality_scores = score_all(&docs, &proxy);
    let probe_scores = score_all(&docs, &probe);
    let filter_seed = derive_seed(spec.seed, STREAM_FILTER);

    let mut points = Vec::with_capacity(alphas.len());
    for alpha in alphas {
        let (mask, stats) = survivor_mask(&docs, &quality_scores, alpha, filter_seed)?;
        let (mut n, mut n_ref, mut n_min) = (0u64, 0u64, 0u64);
        for (s, _) in corpus.iter().zip(&mask).filter(|(_, &k)| k) {
            n += 1;
            match s.population {
                Population::Ref => n_ref += 1,
                Population::Min => n_min += 1,
                Population::Junk => {}
            }
        }
        let reading = probe_reading(probe_scores.iter().zip(&mask).filter(|(_, &k)| k).map(|(&s, _)| s)).ok();
        let good = n_ref + n_min;
        let mean_true_quality = (n > 0).then(|| good as f64 / n as f64);
        let min_share = (good > 0).then(|| n_min as f64 / good as f64);
        let entropy = (n > 0).then(|| min_share.map_or(0.0, normalized_binary_entropy));
        points.push(ExperimentPoint {
            alpha,
            discard_fraction: stats.fraction_discarded_docs,
            n_survivors: n,
            mean_true_quality,
            latent_min_fraction: (n > 0).then(|| n_min as f64 / n as f64),
            probe_mean_domain_prob: reading.map(|r| r.mean),
            probe_frac_classified_domain: reading.map(|r| r.frac_classified),
            min_share_of_quality: min_share,
            normalized_entropy: entropy,
            composite: mean_true_quality.zip(entropy).map(|(q, h)| q * h),
        });
    }
    Ok(ExperimentReport {
        points,
        proxy_train_accuracy,
        probe_train_accuracy,
    })
}

/// Documents per "context" in the proxy coverage tasks.
pub const PROXY_CONTEXT_DOCS: i32 = 5;

impl ExperimentReport {
    /// Stand-ins for downstream tasks, one per good population.
    ///
    /// Task `<pop>_coverage` at α is the probability that a context of
    /// [`PROXY_CONTEXT_DOCS`] survivors drawn at random holds at least one
    /// good document of that population: `1 − (1 − c)^k` with `c` the
    /// population's survivor share. Its standard error comes from the
    /// binomial error of `c` through the delta method. Points with no
    /// survivors are skipped.
    pub fn proxy_task_results(&self) -> Vec<TaskResult> {
        let k = PROXY_CONTEXT_DOCS;
        let mut out = Vec::new();
        for p in &self.points {
            let (Some(q), Some(m)) = (p.mean_true_quality, p.latent_min_fraction) else {
                continue;
            };
            let n = p.n_survivors as f64;
            for (name, share) in [("ref_coverage", (q - m).max(0.0)), ("min_coverage", m)] {
                let accuracy = 1.0 - (1.0 - share).powi(k);
                let se_share = (share * (1.0 - share) / n).sqrt();
                let se = f64::from(k) * (1.0 - share).powi(k - 1) * se_share;
                out.push(TaskResult::with_se(name, p.alpha, accuracy, se));
            }
        }
        out
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub const QUALITY_CSV_HEADER: [&str; 5] = [
    "alpha",
    "discard_fraction",
    "n_survivors",
    "mean_true_quality",
    "latent_min_fraction",
];
pub const COMPOSITE_CSV_HEADER: [&str; 6] = [
    "alpha",
    "discard_fraction",
    "mean_true_quality",
    "min_share_of_quality",
    "normalized_entropy",
    "composite",
];

impl ExperimentReport {
    /// Writes `quality_curve.csv`, `composition_curve.csv` (probe curve
    /// layout, domain `minority`), `composite_curve.csv` and
    /// `proxy_tasks.csv` (task-results layout) into `out_dir`.
    pub fn write_csvs(&self, out_dir: impl AsRef<Path>) -> Result<()> {
        let out_dir = out_dir.as_ref();
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        write_csv(
            &out_dir.join("quality_curve.csv"),
            &QUALITY_CSV_HEADER,
            self.points.iter().map(|p| {
                vec![
                    p.alpha.to_string(),
                    p.discard_fraction.to_string(),
                    p.n_survivors.to_string(),
                    opt(p.mean_true_quality),
                    opt(p.latent_min_fraction),
                ]
            }),
        )?;
        write_csv(
            &out_dir.join("composition_curve.csv"),
            &crate::probe::CURVE_CSV_HEADER,
            self.points.iter().map(|p| {
                vec![
                    "minority".to_string(),
                    p.alpha.to_string(),
                    p.discard_fraction.to_string(),
                    opt(p.probe_mean_domain_prob),
                    opt(p.probe_frac_classified_domain),
                    p.n_survivors.to_string(),
                ]
            }),
        )?;
        write_csv(
            &out_dir.join("composite_curve.csv"),
            &COMPOSITE_CSV_HEADER,
            self.points.iter().map(|p| {
                vec![
                    p.alpha.to_string(),
                    p.discard_fraction.to_string(),
                    opt(p.mean_true_quality),
                    opt(p.min_share_of_quality),
                    opt(p.normalized_entropy),
                    opt(p.composite),
                ]
            }),
        )?;
        let tasks_path = out_dir.join("proxy_tasks.csv");
        let file = File::create(&tasks_path).map_err(|e| Error::io(&tasks_path, e))?;
        write_results_csv(BufWriter::new(file), &self.proxy_task_results())?;
        Ok(())
    }
}
