//! Percentile bootstrap over resampled case indices.
//!
//! Replicate r draws its index stream from (seed, r), so replicates can be
//! computed in parallel in any order and still match the serial run bit for
//! bit. Two score vectors bootstrapped with the same (seed, r) share the
//! same resampled cases, which is what makes per-replicate differences
//! between models meaningful.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{auprc, auroc, confusion_metrics};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::percentile_sorted;

/// Metric evaluated per replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MetricKind {
    Auroc,
    Auprc,
    /// Accuracy at a fixed decision threshold.
    AccuracyAt(f64),
}

impl MetricKind {
    pub fn evaluate(&self, scores: &[f64], labels: &[u8]) -> Result<f64> {
        match self {
            MetricKind::Auroc => auroc(scores, labels),
            MetricKind::Auprc => auprc(scores, labels),
            MetricKind::AccuracyAt(t) => Ok(confusion_metrics(scores, labels, *t)?.accuracy),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Auroc => "auroc",
            MetricKind::Auprc => "auprc",
            MetricKind::AccuracyAt(_) => "accuracy",
        }
    }
}

/// The index stream for replicate `replicate`: n draws with replacement.
pub fn resample_indices(seed: u64, replicate: u64, n: usize) -> Vec<usize> {
    let mut rng = rng::stream(seed, replicate);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    /// Replicate metric values in replicate order; None where the metric was
    /// undefined on that resample (e.g. a single-class bootstrap cohort).
    pub replicates: Vec<Option<f64>>,
    pub n_undefined: usize,
}

impl BootstrapCi {
    /// Defined replicate values, in replicate order.
    pub fn defined(&self) -> Vec<f64> {
        self.replicates.iter().filter_map(|v| *v).collect()
    }
}

/// Percentile [2.5%, 97.5%] confidence interval from `n_boot` resamples of
/// the case indices. Replicates where the metric is undefined are dropped
/// (surfaced in `n_undefined`); more than 50% undefined is an error.
pub fn bootstrap_ci(
    scores: &[f64],
    labels: &[u8],
    metric: MetricKind,
    n_boot: usize,
    seed: u64,
) -> Result<BootstrapCi> {
    let point = metric.evaluate(scores, labels)?;
    let n = scores.len();
    let replicates: Vec<Option<f64>> = (0..n_boot as u64)
        .into_par_iter()
        .map(|r| {
            let idx = resample_indices(seed, r, n);
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            metric.evaluate(&s, &y).ok()
        })
        .collect();
    ci_from_replicates(point, replicates)
}

pub(crate) fn ci_from_replicates(
    point: f64,
    replicates: Vec<Option<f64>>,
) -> Result<BootstrapCi> {
    let n_boot = replicates.len();
    let mut defined: Vec<f64> = replicates.iter().filter_map(|v| *v).collect();
    let n_undefined = n_boot - defined.len();
    if n_undefined * 2 > n_boot {
        return Err(Error::UndefinedMetric(format!(
            "{n_undefined} of {n_boot} bootstrap replicates undefined"
        )));
    }
    defined.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&defined, 0.025);
    let hi = percentile_sorted(&defined, 0.975);
    Ok(BootstrapCi {
        point,
        lo,
        hi,
        replicates,
        n_undefined,
    })
}
