//! Domain-composition probes: how much domain-like text survives filtering
//! at each permissivity level.
//!
//! A probe is a second classifier trained domain-vs-reference. For every α
//! the quality filter is applied and the probe's mean probability (and the
//! share of survivors it classifies as domain, score > 0.5) is measured on
//! what is left. Curves are indexed by realized discard fraction.

use std::io::Write;

use log::warn;

use crate::classifier::LinearModel;
use crate::corpus_io::Document;
use crate::error::{Error, Result};
use crate::filter::{filter_scored, score_all, FilterPolicy, FilterStats, Scorer, StatsAccumulator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReading {
    pub mean: f64,
    pub frac_classified: f64,
    pub n: u64,
}

/// Mean and share-above-0.5 of a set of probe scores.
pub fn probe_reading(scores: impl IntoIterator<Item = f64>) -> Result<ProbeReading> {
    let (mut n, mut sum, mut above) = (0u64, 0.0, 0u64);
    for s in scores {
        n += 1;
        sum += s;
        above += u64::from(s > 0.5);
    }
    if n == 0 {
        return Err(Error::EmptyFilteredSet);
    }
    Ok(ProbeReading {
        mean: sum / n as f64,
        frac_classified: above as f64 / n as f64,
        n,
    })
}

pub fn mean_domain_probability(docs: &[Document], domain_model: &LinearModel) -> Result<ProbeReading> {
    probe_reading(score_all(docs, domain_model))
}

/// Keep mask for one α. `alpha == 0` means no filtering.
pub fn survivor_mask(docs: &[Document], quality_scores: &[f64], alpha: f64, seed: u64) -> Result<(Vec<bool>, FilterStats)> {
    if alpha == 0.0 {
        let mut acc = StatsAccumulator::default();
        for (d, &s) in docs.iter().zip(quality_scores) {
            acc.record(d.byte_len, s, true);
        }
        return Ok((vec![true; docs.len()], acc.finish()));
    }
    let policy = FilterPolicy::new(alpha, seed)?;
    Ok(filter_scored(docs, quality_scores, &policy))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositionPoint {
    /// 0 encodes the unfiltered corpus.
    pub alpha: f64,
    pub discard_fraction: f64,
    /// `None` when no document survived.
    pub mean_domain_prob: Option<f64>,
    pub frac_classified_domain: Option<f64>,
    pub n_survivors: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionCurve {
    pub domain_label: String,
    /// Sorted by discard fraction, ties by α.
    pub points: Vec<CompositionPoint>,
}

pub const CURVE_CSV_HEADER: [&str; 6] = [
    "domain",
    "alpha",
    "discard_fraction",
    "mean_domain_prob",
    "frac_classified_domain",
    "n_survivors",
];

/// Sorted, de-duplicated α grid that always starts with the unfiltered 0.
pub fn alpha_grid_with_baseline(alphas: &[f64]) -> Result<Vec<f64>> {
    if alphas.is_empty() {
        return Err(Error::invalid("at least one alpha is required"));
    }
    if let Some(bad) = alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::invalid(format!("alpha must be a non-negative number, got {bad}")));
    }
    let mut grid = alphas.to_vec();
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

/// Composition points from precomputed quality and probe scores.
pub fn composition_points(
    docs: &[Document],
    quality_scores: &[f64],
    domain_scores: &[f64],
    alphas: &[f64],
    seed: u64,
) -> Result<Vec<CompositionPoint>> {
    let grid = alpha_grid_with_baseline(alphas)?;
    let mut points = Vec::with_capacity(grid.len());
    for alpha in grid {
        let (mask, stats) = survivor_mask(docs, quality_scores, alpha, seed)?;
        let survivors = domain_scores.iter().zip(&mask).filter(|(_, &k)| k).map(|(&s, _)| s);
        let point = match probe_reading(survivors) {
            Ok(r) => CompositionPoint {
                alpha,
                discard_fraction: stats.fraction_discarded_docs,
                mean_domain_prob: Some(r.mean),
                frac_classified_domain: Some(r.frac_classified),
                n_survivors: r.n,
            },
            Err(Error::EmptyFilteredSet) => {
                warn!("alpha {alpha}: no documents survive filtering; point recorded as absent");
                CompositionPoint {
                    alpha,
                    discard_fraction: stats.fraction_discarded_docs,
                    mean_domain_prob: None,
                    frac_classified_domain: None,
                    n_survivors: 0,
                }
            }
            Err(e) => return Err(e),
        };
        points.push(point);
    }
    points.sort_by(|a, b| {
        a.discard_fraction
            .total_cmp(&b.discard_fraction)
            .then(a.alpha.total_cmp(&b.alpha))
    });
    Ok(points)
}

/// Filters `corpus` at every α (plus the α = 0 baseline) and measures the
/// domain composition of the survivors.
pub fn composition_curve<S: Scorer + ?Sized>(
    corpus: &[Document],
    quality_model: &S,
    domain_model: &LinearModel,
    alphas: &[f64],
    seed: u64,
) -> Result<CompositionCurve> {
    let quality_scores = score_all(corpus, quality_model);
    let domain_scores = score_all(corpus, domain_model);
    Ok(CompositionCurve {
        domain_label: domain_model.positive_label().to_string(),
        points: composition_points(corpus, &quality_scores, &domain_scores, alphas, seed)?,
    })
}

impl CompositionCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CURVE_CSV_HEADER)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for p in &self.points {
            w.write_record([
                self.domain_label.clone(),
                p.alpha.to_string(),
                p.discard_fraction.to_string(),
                opt(p.mean_domain_prob),
                opt(p.frac_classified_domain),
                p.n_survivors.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
