//! Ranking metrics and multi-run aggregation.

use serde::{Deserialize, Serialize};

use crate::dataset::ANOMALY;
use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l == ANOMALY).count();
    Ok((pos, labels.len() - pos))
}

/// Groups of tied scores in descending score order, as (anomalies, normals) per group.
fn tie_groups(scores: &[f64], labels: &[u8]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        if prev != Some(scores[i]) {
            groups.push((0, 0));
            prev = Some(scores[i]);
        }
        let g = groups.last_mut().expect("pushed above");
        if labels[i] == ANOMALY {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Probability that a random anomaly outranks a random normal, ties counting one half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC-ROC needs both anomalies and normals".into(),
        ));
    }
    let mut normals_below = neg;
    let mut wins = 0.0;
    for (a, n) in tie_groups(scores, labels) {
        normals_below -= n;
        wins += (a * normals_below) as f64 + 0.5 * (a * n) as f64;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Non-interpolated average precision; each distinct score is one threshold.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("AUC-PR needs at least one anomaly".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (a, n) in tie_groups(scores, labels) {
        tp += a;
        fp += n;
        if a > 0 {
            ap += a as f64 / pos as f64 * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub n_test: usize,
    pub n_anomalies: usize,
    pub seed: u64,
}

impl MetricsReport {
    pub fn compute(scores: &[f64], labels: &[u8], seed: u64) -> Result<Self> {
        Ok(MetricsReport {
            auc_roc: auc_roc(scores, labels)?,
            auc_pr: auc_pr(scores, labels)?,
            n_test: labels.len(),
            n_anomalies: labels.iter().filter(|&&l| l == ANOMALY).count(),
            seed,
        })
    }
}

/// Mean and population standard deviation of one metric over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub runs: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("cannot summarize zero runs".into()));
        }
        let n = values.len() as f64;
        // shifted by the first value so identical runs give an exact mean and zero spread
        let shift = values[0];
        let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        Ok(MetricSummary { mean, std, runs: values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub auc_roc: MetricSummary,
    pub auc_pr: MetricSummary,
    pub n_runs: usize,
    pub runs: Vec<MetricsReport>,
}

pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::Argument("no runs to aggregate".into()));
    }
    Ok(AggregateReport {
        auc_roc: MetricSummary::from_values(reports.iter().map(|r| r.auc_roc).collect())?,
        auc_pr: MetricSummary::from_values(reports.iter().map(|r| r.auc_pr).collect())?,
        n_runs: reports.len(),
        runs: reports.to_vec(),
    })
}
