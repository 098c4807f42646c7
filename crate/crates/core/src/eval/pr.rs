//! Precision-recall analysis. AUPRC is average precision by step summation
//! over descending unique thresholds, not trapezoidal interpolation, to
//! avoid optimism on rare events.

use serde::{Deserialize, Serialize};

use super::{check_aligned, class_counts};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

/// Average precision: sum of (R_i - R_{i-1}) * P_i over descending unique
/// thresholds.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(pr_curve(scores, labels)?.auc)
}

/// Precision-recall curve over descending unique score thresholds; the first
/// point is the highest threshold (lowest recall reached by the ranking).
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<PrCurve> {
    check_aligned(scores, labels)?;
    let (n_pos, _) = class_counts(labels);
    if n_pos == 0 {
        return Err(Error::UndefinedMetric(
            "AUPRC needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            recall,
            precision,
            threshold,
        });
    }
    Ok(PrCurve { points, auc: ap })
}
