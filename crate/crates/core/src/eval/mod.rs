//! Metrics, resampling, hypothesis testing, and reclassification analysis
//! for paired model comparison.

mod bootstrap;
mod compare;
mod confusion;
mod nri;
mod pr;
mod roc;
mod wilcoxon;

pub use bootstrap::{bootstrap_ci, resample_indices, BootstrapCi, MetricKind};
pub use compare::{
    compare_models, render_report_text, CompareOptions, ComparisonReport, MetricWithCi,
    ModelEvaluation, OutcomeComparison, PairedPValues,
};
pub use confusion::{confusion_metrics, ConfusionSummary};
pub use nri::{nri, nri_from_components, nri_with_ci, NriReport};
pub use pr::{auprc, pr_curve, PrCurve};
pub use roc::{auroc, roc_curve, youden_threshold, RocCurve, YoudenPoint};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};

use crate::error::{Error, Result};

/// Shared validation: equal lengths, nonempty.
fn check_aligned(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Alignment(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InsufficientData("empty score vector".into()));
    }
    Ok(())
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    (pos, labels.len() - pos)
}
