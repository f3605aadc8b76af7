//! Equal-weight aggregation of per-task accuracies with propagated
//! standard error.
//!
//! For `n` tasks the aggregate is the plain mean of accuracies and
//! `se_mean = sqrt(Σ se_i²) / n`. Missing per-task errors are filled with the
//! binomial estimate `sqrt(acc·(1 − acc) / n_instances)`.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: String,
    pub alpha: f64,
    pub accuracy: f64,
    pub se: Option<f64>,
    pub n_instances: Option<u64>,
}

impl TaskResult {
    pub fn with_se(task: impl Into<String>, alpha: f64, accuracy: f64, se: f64) -> Self {
        TaskResult {
            task: task.into(),
            alpha,
            accuracy,
            se: Some(se),
            n_instances: None,
        }
    }

    pub fn with_count(task: impl Into<String>, alpha: f64, accuracy: f64, n_instances: u64) -> Self {
        TaskResult {
            task: task.into(),
            alpha,
            accuracy,
            se: None,
            n_instances: Some(n_instances),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("task {:?}: {what}", self.task)));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be a non-negative number");
        }
        if !(0.0..=1.0).contains(&self.accuracy) {
            return bad("accuracy must lie in [0, 1]");
        }
        match (self.se, self.n_instances) {
            (None, None) => bad("needs se or n_instances"),
            (Some(se), _) if !(se.is_finite() && se >= 0.0) => bad("se must be a non-negative number"),
            (_, Some(0)) => bad("n_instances must be >= 1"),
            _ => Ok(()),
        }
    }

    /// Reported standard error, or the binomial estimate when absent.
    pub fn effective_se(&self) -> f64 {
        match (self.se, self.n_instances) {
            (Some(se), _) => se,
            (None, Some(n)) => task_se(self.accuracy, n),
            (None, None) => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub alpha: f64,
    pub mean_accuracy: f64,
    pub se_mean: f64,
    pub n_tasks: u64,
}

/// Binomial standard error of a proportion.
pub fn task_se(accuracy: f64, n_instances: u64) -> f64 {
    (accuracy * (1.0 - accuracy) / n_instances as f64).sqrt()
}

/// Perplexity-style metrics are not accuracies and stay out of the average.
pub fn is_perplexity_task(task: &str) -> bool {
    let t = task.to_ascii_lowercase();
    t.contains("perplexity") || t.ends_with("_ppl")
}

fn check_duplicates<'a>(results: impl IntoIterator<Item = &'a TaskResult>) -> Result<()> {
    let mut seen = HashSet::new();
    for r in results {
        if !seen.insert((r.task.as_str(), r.alpha.to_bits())) {
            return Err(Error::DuplicateTaskResult {
                task: r.task.clone(),
                alpha: r.alpha,
            });
        }
    }
    Ok(())
}

/// Aggregates the task results of a single α.
pub fn aggregate(results: &[TaskResult]) -> Result<AggregateResult> {
    let included: Vec<&TaskResult> = results.iter().filter(|r| !is_perplexity_task(&r.task)).collect();
    let Some(first) = included.first() else {
        return Err(Error::invalid("no task results to aggregate"));
    };
    for r in &included {
        r.validate()?;
        if r.alpha != first.alpha {
            return Err(Error::invalid(format!(
                "mixed alpha values {} and {} in one aggregate",
                first.alpha, r.alpha
            )));
        }
    }
    check_duplicates(included.iter().copied())?;
    let n = included.len() as f64;
    let mean_accuracy = included.iter().map(|r| r.accuracy).sum::<f64>() / n;
    let se_mean = included.iter().map(|r| r.effective_se().powi(2)).sum::<f64>().sqrt() / n;
    Ok(AggregateResult {
        alpha: first.alpha,
        mean_accuracy,
        se_mean,
        n_tasks: included.len() as u64,
    })
}

/// Groups results by α and aggregates each group, sorted by α ascending.
pub fn aggregate_curve(results: &[TaskResult]) -> Result<Vec<AggregateResult>> {
    check_duplicates(results)?;
    let mut sorted: Vec<&TaskResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    let mut out = Vec::new();
    for group in sorted.chunk_by(|a, b| a.alpha == b.alpha) {
        let group: Vec<TaskResult> = group.iter().map(|r| (*r).clone()).collect();
        out.push(aggregate(&group)?);
    }
    Ok(out)
}

pub const RESULTS_CSV_HEADER: [&str; 5] = ["task", "alpha", "accuracy", "se", "n_instances"];
pub const AGGREGATE_CSV_HEADER: [&str; 4] = ["alpha", "mean_accuracy", "se_mean", "n_tasks"];

/// Reads `task,alpha,accuracy,se,n_instances`; `se` or `n_instances` may be empty.
pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<TaskResult>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != RESULTS_CSV_HEADER {
        return Err(Error::invalid(format!(
            "expected header {:?}, got {header:?}",
            RESULTS_CSV_HEADER.join(",")
        )));
    }
    let rows: Vec<TaskResult> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    for row in &rows {
        row.validate()?;
    }
    Ok(rows)
}

pub fn write_results_csv<W: Write>(out: W, results: &[TaskResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_CSV_HEADER)?;
    for r in results {
        w.write_record([
            r.task.clone(),
            r.alpha.to_string(),
            r.accuracy.to_string(),
            r.se.map(|v| v.to_string()).unwrap_or_default(),
            r.n_instances.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(out: W, rows: &[AggregateResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_CSV_HEADER)?;
    for row in rows {
        w.write_record([
            row.alpha.to_string(),
            row.mean_accuracy.to_string(),
            row.se_mean.to_string(),
            row.n_tasks.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
