//! Pareto-thresholded stochastic filtering.
//!
//! A document with quality score `s` is kept when a random threshold
//! `τ` exceeds `1 − s`. `τ` follows a Lomax law (Pareto type II with unit
//! scale, support `[0, ∞)`) with shape `α`:
//!
//! ```text
//! P(τ > t) = (1 + t)^(−α)        τ = (1 − u)^(−1/α) − 1,  u ~ U(0, 1)
//! P(keep | s) = (2 − s)^(−α)
//! ```
//!
//! Small `α` keeps nearly everything; large `α` approaches a hard cut that
//! only keeps scores near 1. `u` comes from [`crate::rng::keyed_unit`] keyed
//! by `(seed, doc.id)`, so a decision never depends on processing order or
//! thread count.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Deserialize;

use crate::classifier::LinearModel;
use crate::corpus_io::Document;
use crate::error::{Error, Result};
use crate::rng::keyed_unit;

/// Documents scored per parallel batch in [`filter_stream`].
pub const BATCH_SIZE: usize = 4096;

pub const SWEEP_CSV_HEADER: [&str; 7] = [
    "alpha",
    "n_seen",
    "n_kept",
    "fraction_discarded_docs",
    "fraction_discarded_bytes",
    "mean_score_kept",
    "mean_score_discarded",
];

/// Anything that maps a document to a quality score in [0, 1].
pub trait Scorer: Sync {
    fn score(&self, doc: &Document) -> f64;
}

impl Scorer for LinearModel {
    fn score(&self, doc: &Document) -> f64 {
        LinearModel::score(self, doc)
    }
}

impl<F> Scorer for F
where
    F: Fn(&Document) -> f64 + Sync,
{
    fn score(&self, doc: &Document) -> f64 {
        self(doc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterPolicy {
    pub alpha: f64,
    pub seed: u64,
}

impl FilterPolicy {
    pub fn new(alpha: f64, seed: u64) -> Result<Self> {
        validate_alpha(alpha)?;
        Ok(FilterPolicy { alpha, seed })
    }
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must be a positive number, got {alpha}")))
    }
}

/// Inverse-CDF Lomax draw: `(1 − u)^(−1/α) − 1`.
pub fn sample_threshold(alpha: f64, u: f64) -> f64 {
    debug_assert!(alpha > 0.0 && (0.0..1.0).contains(&u));
    (1.0 - u).powf(-1.0 / alpha) - 1.0
}

/// Closed-form `P(τ > 1 − score) = (2 − score)^(−α)`.
pub fn keep_probability(score: f64, alpha: f64) -> f64 {
    (2.0 - score).powf(-alpha)
}

/// The keep rule for an explicit uniform draw `u`.
pub fn decide_with_u(score: f64, alpha: f64, u: f64) -> bool {
    sample_threshold(alpha, u) > 1.0 - score
}

/// Keep decision for document `doc_id`; a pure function of
/// `(policy.seed, doc_id, policy.alpha, score)`.
pub fn decide_id(doc_id: u64, score: f64, policy: &FilterPolicy) -> bool {
    decide_with_u(score, policy.alpha, keyed_unit(policy.seed, doc_id))
}

pub fn decide(doc: &Document, score: f64, policy: &FilterPolicy) -> bool {
    decide_id(doc.id, score, policy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterStats {
    pub n_seen: u64,
    pub n_kept: u64,
    pub bytes_seen: u64,
    pub bytes_kept: u64,
    pub fraction_discarded_docs: f64,
    pub fraction_discarded_bytes: f64,
    /// `None` when nothing was kept.
    pub mean_score_kept: Option<f64>,
    /// `None` when nothing was discarded.
    pub mean_score_discarded: Option<f64>,
}

/// Order-insensitive running totals behind [`FilterStats`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StatsAccumulator {
    n_seen: u64,
    n_kept: u64,
    bytes_seen: u64,
    bytes_kept: u64,
    score_sum_kept: f64,
    score_sum_discarded: f64,
}

impl StatsAccumulator {
    pub fn record(&mut self, byte_len: usize, score: f64, kept: bool) {
        self.n_seen += 1;
        self.bytes_seen += byte_len as u64;
        if kept {
            self.n_kept += 1;
            self.bytes_kept += byte_len as u64;
            self.score_sum_kept += score;
        } else {
            self.score_sum_discarded += score;
        }
    }

    pub fn finish(&self) -> FilterStats {
        let frac = |kept: u64, seen: u64| {
            if seen == 0 {
                0.0
            } else {
                1.0 - kept as f64 / seen as f64
            }
        };
        let n_discarded = self.n_seen - self.n_kept;
        FilterStats {
            n_seen: self.n_seen,
            n_kept: self.n_kept,
            bytes_seen: self.bytes_seen,
            bytes_kept: self.bytes_kept,
            fraction_discarded_docs: frac(self.n_kept, self.n_seen),
            fraction_discarded_bytes: frac(self.bytes_kept, self.bytes_seen),
            mean_score_kept: (self.n_kept > 0).then(|| self.score_sum_kept / self.n_kept as f64),
            mean_score_discarded: (n_discarded > 0)
                .then(|| self.score_sum_discarded / n_discarded as f64),
        }
    }
}

/// Scores every document in parallel; output order matches input order.
pub fn score_all<S: Scorer + ?Sized>(docs: &[Document], scorer: &S) -> Vec<f64> {
    docs.par_iter().map(|d| scorer.score(d)).collect()
}

/// Applies the keep rule to pre-scored documents, returning a keep mask and
/// the run statistics.
pub fn filter_scored(docs: &[Document], scores: &[f64], policy: &FilterPolicy) -> (Vec<bool>, FilterStats) {
    assert_eq!(docs.len(), scores.len(), "one score per document");
    let mask: Vec<bool> = docs
        .par_iter()
        .zip(scores.par_iter())
        .map(|(d, &s)| decide(d, s, policy))
        .collect();
    let mut acc = StatsAccumulator::default();
    for ((d, &s), &k) in docs.iter().zip(scores).zip(&mask) {
        acc.record(d.byte_len, s, k);
    }
    (mask, acc.finish())
}

/// Streams `docs` through score → decide, handing kept documents to `sink`
/// in input order.
///
/// Scoring runs on the current rayon pool in batches of [`BATCH_SIZE`];
/// the kept set and the statistics are identical for any pool size.
pub fn filter_stream<I, S, F>(docs: I, scorer: &S, policy: &FilterPolicy, mut sink: F) -> Result<FilterStats>
where
    I: IntoIterator<Item = Result<Document>>,
    S: Scorer + ?Sized,
    F: FnMut(Document) -> Result<()>,
{
    validate_alpha(policy.alpha)?;
    let mut acc = StatsAccumulator::default();
    let mut batch = Vec::with_capacity(BATCH_SIZE);
    let mut flush = |batch: &mut Vec<Document>, acc: &mut StatsAccumulator| -> Result<()> {
        let decisions: Vec<(f64, bool)> = batch
            .par_iter()
            .map(|d| {
                let s = scorer.score(d);
                (s, decide(d, s, policy))
            })
            .collect();
        for (doc, (score, kept)) in batch.drain(..).zip(decisions) {
            acc.record(doc.byte_len, score, kept);
            if kept {
                sink(doc)?;
            }
        }
        Ok(())
    };
    for doc in docs {
        batch.push(doc?);
        if batch.len() == BATCH_SIZE {
            flush(&mut batch, &mut acc)?;
        }
    }
    flush(&mut batch, &mut acc)?;
    Ok(acc.finish())
}

/// In-memory convenience over [`filter_scored`].
pub fn filter_documents<S: Scorer + ?Sized>(
    docs: &[Document],
    scorer: &S,
    policy: &FilterPolicy,
) -> Result<(Vec<Document>, FilterStats)> {
    validate_alpha(policy.alpha)?;
    let scores = score_all(docs, scorer);
    let (mask, stats) = filter_scored(docs, &scores, policy);
    let kept = docs
        .iter()
        .zip(mask)
        .filter(|(_, k)| *k)
        .map(|(d, _)| d.clone())
        .collect();
    Ok((kept, stats))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub stats: FilterStats,
}

/// Discard statistics per α, sorted by α ascending.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

/// One parsed line of a sweep CSV.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SweepCsvRow {
    pub alpha: f64,
    pub n_seen: u64,
    pub n_kept: u64,
    pub fraction_discarded_docs: f64,
    pub fraction_discarded_bytes: f64,
    pub mean_score_kept: Option<f64>,
    pub mean_score_discarded: Option<f64>,
}

fn fmt4(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_default()
}

impl SweepReport {
    pub fn from_rows(mut rows: Vec<SweepRow>) -> Self {
        rows.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
        SweepReport { rows }
    }

    /// Renders the report; fractions and means carry 4 decimals.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_CSV_HEADER)?;
        for row in &self.rows {
            write_stats_record(&mut w, row.alpha, &row.stats)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is UTF-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepCsvRow>> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != SWEEP_CSV_HEADER {
            return Err(Error::invalid(format!("unexpected sweep header {header:?}")));
        }
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }
}

fn write_stats_record<W: Write>(w: &mut csv::Writer<W>, alpha: f64, s: &FilterStats) -> Result<()> {
    w.write_record([
        alpha.to_string(),
        s.n_seen.to_string(),
        s.n_kept.to_string(),
        format!("{:.4}", s.fraction_discarded_docs),
        format!("{:.4}", s.fraction_discarded_bytes),
        fmt4(s.mean_score_kept),
        fmt4(s.mean_score_discarded),
    ])?;
    Ok(())
}

/// Single-row stats file written beside filtered chunks.
pub fn write_stats_csv<W: Write>(out: W, alpha: f64, stats: &FilterStats) -> Result<()> {
    SweepReport {
        rows: vec![SweepRow { alpha, stats: *stats }],
    }
    .write_csv(out)
}

/// Runs one filter per α with the same seed. Documents are scored once.
pub fn sweep<S: Scorer + ?Sized>(docs: &[Document], scorer: &S, alphas: &[f64], seed: u64) -> Result<SweepReport> {
    if alphas.is_empty() {
        return Err(Error::invalid("sweep needs at least one alpha"));
    }
    for &a in alphas {
        validate_alpha(a)?;
    }
    let scores = score_all(docs, scorer);
    let rows = alphas
        .iter()
        .map(|&alpha| {
            let (_, stats) = filter_scored(docs, &scores, &FilterPolicy { alpha, seed });
            SweepRow { alpha, stats }
        })
        .collect();
    Ok(SweepReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: u64, text: &str) -> Document {
        Document::new(id, text, "t")
    }

    #[test]
    fn threshold_examples() {
        for alpha in [0.5, 1.0, 3.0] {
            assert_eq!(sample_threshold(alpha, 0.0), 0.0);
        }
        assert!((sample_threshold(1.0, 0.75) - 3.0).abs() < 1e-12);
        assert!((sample_threshold(2.0, 0.75) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn keep_probability_examples() {
        assert_eq!(keep_probability(1.0, 8.0), 1.0);
        assert_eq!(keep_probability(0.0, 1.0), 0.5);
        assert!((keep_probability(0.5, 2.0) - 1.0 / 2.25).abs() < 1e-15);
    }

    #[test]
    fn keep_rule_arithmetic() {
        // τ = 0.3 at alpha = 1 needs (1 - u)^-1 = 1.3
        let u = 1.0 - 1.0 / 1.3;
        assert!((sample_threshold(1.0, u) - 0.3).abs() < 1e-12);
        assert!(decide_with_u(0.8, 1.0, u));
        assert!(!decide_with_u(0.6, 1.0, u));
    }

    #[test]
    fn perfect_score_always_kept() {
        let policy = FilterPolicy::new(8.0, 3).unwrap();
        assert!((0..10_000).all(|i| decide_id(i, 1.0, &policy)));
    }

    #[test]
    fn decision_depends_only_on_key() {
        let policy = FilterPolicy::new(2.0, 11).unwrap();
        let a = Document::new(5, "one text", "x");
        let b = Document::new(5, "completely different", "y");
        for s in [0.1, 0.4, 0.9] {
            assert_eq!(decide(&a, s, &policy), decide(&b, s, &policy));
        }
    }

    #[test]
    fn policy_rejects_bad_alpha() {
        assert!(FilterPolicy::new(0.0, 0).is_err());
        assert!(FilterPolicy::new(-1.0, 0).is_err());
        assert!(FilterPolicy::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn constant_score_keep_rate() {
        let n = 100_000u64;
        let policy = FilterPolicy::new(2.0, 99).unwrap();
        let kept = (0..n).filter(|&i| decide_id(i, 0.5, &policy)).count() as f64 / n as f64;
        let p = keep_probability(0.5, 2.0);
        assert!((kept - p).abs() <= 4.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn tiny_alpha_keeps_everything() {
        let docs: Vec<_> = (0..10_000).map(|i| doc(i, "x")).collect();
        let scores: Vec<f64> = (0..10_000).map(|i| (i as f64 + 0.5) / 10_000.0).collect();
        let (_, stats) = filter_scored(&docs, &scores, &FilterPolicy::new(1e-9, 0).unwrap());
        assert!(stats.fraction_discarded_docs < 1e-3);
    }

    #[test]
    fn stats_accounting() {
        let docs = [doc(0, "aaaa"), doc(1, "bb"), doc(2, "")];
        let mut acc = StatsAccumulator::default();
        acc.record(docs[0].byte_len, 0.9, true);
        acc.record(docs[1].byte_len, 0.2, false);
        acc.record(docs[2].byte_len, 0.4, false);
        let s = acc.finish();
        assert_eq!((s.n_seen, s.n_kept, s.bytes_seen, s.bytes_kept), (3, 1, 6, 4));
        assert!((s.fraction_discarded_docs - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.fraction_discarded_bytes - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(s.mean_score_kept, Some(0.9));
        assert!((s.mean_score_discarded.unwrap() - 0.3).abs() < 1e-15);
        let empty = StatsAccumulator::default().finish();
        assert_eq!(empty.fraction_discarded_docs, 0.0);
        assert_eq!(empty.mean_score_kept, None);
    }

    #[test]
    fn stream_matches_in_memory_and_keeps_order() {
        let docs: Vec<_> = (0..10_000).map(|i| doc(i, &format!("w{}", i % 97))).collect();
        let scorer = |d: &Document| (d.id % 101) as f64 / 100.0;
        let policy = FilterPolicy::new(3.0, 5).unwrap();
        let (kept_mem, stats_mem) = filter_documents(&docs, &scorer, &policy).unwrap();
        let mut kept_stream = Vec::new();
        let stats_stream = filter_stream(docs.iter().cloned().map(Ok), &scorer, &policy, |d| {
            kept_stream.push(d);
            Ok(())
        })
        .unwrap();
        assert_eq!(kept_mem, kept_stream);
        assert_eq!(stats_mem, stats_stream);
        assert!(kept_stream.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn stream_propagates_input_errors() {
        let scorer = |_: &Document| 0.5;
        let input = vec![Ok(doc(0, "a")), Err(Error::invalid("boom"))];
        let policy = FilterPolicy::new(1.0, 0).unwrap();
        assert!(filter_stream(input, &scorer, &policy, |_| Ok(())).is_err());
    }

    #[test]
    fn sweep_is_sorted_and_monotone() {
        let docs: Vec<_> = (0..5_000).map(|i| doc(i, "x")).collect();
        let scorer = |d: &Document| (d.id % 1000) as f64 / 1000.0;
        let report = sweep(&docs, &scorer, &[8.0, 1.0, 4.0, 2.0], 1).unwrap();
        let alphas: Vec<f64> = report.rows.iter().map(|r| r.alpha).collect();
        assert_eq!(alphas, [1.0, 2.0, 4.0, 8.0]);
        assert!(report
            .rows
            .windows(2)
            .all(|w| w[0].stats.fraction_discarded_docs < w[1].stats.fraction_discarded_docs));
        assert!(sweep(&docs, &scorer, &[], 1).is_err());
        assert!(sweep(&docs, &scorer, &[0.0], 1).is_err());
    }

    #[test]
    fn all_perfect_scores_discard_nothing() {
        let docs: Vec<_> = (0..1_000).map(|i| doc(i, "x")).collect();
        let report = sweep(&docs, &|_: &Document| 1.0, &[1.0, 8.0], 0).unwrap();
        assert!(report.rows.iter().all(|r| r.stats.fraction_discarded_docs == 0.0));
    }

    fn table_row(alpha: f64, fraction: f64) -> SweepRow {
        let n_seen = 10_000u64;
        let n_kept = n_seen - (fraction * n_seen as f64).round() as u64;
        let stats = FilterStats {
            n_seen,
            n_kept,
            bytes_seen: 0,
            bytes_kept: 0,
            fraction_discarded_docs: fraction,
            fraction_discarded_bytes: fraction,
            mean_score_kept: Some(0.75),
            mean_score_discarded: None,
        };
        SweepRow { alpha, stats }
    }

    #[test]
    fn published_table_formats_round_trip() {
        let published = [
            (1.0, 0.4107),
            (2.0, 0.6351),
            (3.0, 0.7610),
            (4.0, 0.8329),
            (5.0, 0.8761),
            (6.0, 0.9026),
            (7.0, 0.9198),
            (8.0, 0.9315),
        ];
        let report = SweepReport::from_rows(published.iter().rev().map(|&(a, f)| table_row(a, f)).collect());
        let csv = report.to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), SWEEP_CSV_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "1,10000,5893,0.4107,0.4107,0.7500,");
        assert_eq!(csv.lines().nth(3).unwrap(), "3,10000,2390,0.7610,0.7610,0.7500,");
        assert_eq!(csv.lines().last().unwrap(), "8,10000,685,0.9315,0.9315,0.7500,");
        let parsed = SweepReport::read_csv(csv.as_bytes()).unwrap();
        let back: Vec<(f64, f64)> = parsed.iter().map(|r| (r.alpha, r.fraction_discarded_docs)).collect();
        assert_eq!(back, published);
        assert_eq!(parsed[0].mean_score_discarded, None);
    }

    #[test]
    fn every_score_has_positive_keep_probability() {
        for alpha in [0.5, 1.0, 8.0, 30.0] {
            assert_eq!(keep_probability(0.0, alpha), 2f64.powf(-alpha));
            assert!(keep_probability(0.0, alpha) > 0.0);
        }
    }

    #[test]
    fn kept_set_independent_of_thread_count() {
        let docs: Vec<_> = (0..20_000).map(|i| doc(i, "x")).collect();
        let scorer = |d: &Document| ((d.id * 7919) % 1000) as f64 / 1000.0;
        let policy = FilterPolicy::new(2.5, 77).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut ids = Vec::new();
                let stats = filter_stream(docs.iter().cloned().map(Ok), &scorer, &policy, |d| {
                    ids.push(d.id);
                    Ok(())
                })
                .unwrap();
                (ids, stats)
            })
        };
        let one = run(1);
        assert_eq!(one, run(2));
        assert_eq!(one, run(8));
    }

    proptest::proptest! {
        #[test]
        fn keep_probability_monotone_in_score(alpha in 0.01f64..20.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            proptest::prop_assume!(hi - lo > 1e-9);
            proptest::prop_assert!(keep_probability(lo, alpha) < keep_probability(hi, alpha));
        }

        #[test]
        fn keep_probability_monotone_in_alpha(s in 0.0f64..0.999, a in 0.01f64..20.0, b in 0.01f64..20.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            proptest::prop_assume!(hi - lo > 1e-6);
            proptest::prop_assert!(keep_probability(s, lo) > keep_probability(s, hi));
        }

        #[test]
        fn threshold_is_nonnegative(alpha in 0.01f64..20.0, u in 0.0f64..1.0) {
            proptest::prop_assert!(sample_threshold(alpha, u) >= 0.0);
        }
    }

    #[test]
    fn read_csv_rejects_foreign_header() {
        assert!(SweepReport::read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
