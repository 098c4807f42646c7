//! Paired model comparison: confusion summaries at each model's own cut-off,
//! AUROC/AUPRC with bootstrap CIs, Wilcoxon tests on paired bootstrap
//! replicates, and the NRI block.

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci, BootstrapCi, MetricKind};
use super::confusion::{confusion_metrics, ConfusionSummary};
use super::nri::{nri_with_ci, NriReport};
use super::roc::youden_threshold;
use super::wilcoxon::wilcoxon_signed_rank;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricWithCi {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl From<&BootstrapCi> for MetricWithCi {
    fn from(ci: &BootstrapCi) -> Self {
        MetricWithCi {
            value: ci.point,
            lo: ci.lo,
            hi: ci.hi,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub threshold: f64,
    pub confusion: ConfusionSummary,
    pub auroc: MetricWithCi,
    pub auprc: MetricWithCi,
    pub accuracy: MetricWithCi,
}

/// Two-sided Wilcoxon p-values on paired bootstrap replicate metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedPValues {
    pub auroc: f64,
    pub auprc: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeComparison {
    pub outcome: String,
    pub n_cases: usize,
    pub prevalence: f64,
    pub preop: ModelEvaluation,
    pub postop: ModelEvaluation,
    pub p_values: PairedPValues,
    pub nri: NriReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n_boot: usize,
    pub seed: u64,
    /// Method note: which test produced the paired p-values.
    pub paired_test: String,
    pub outcomes: Vec<OutcomeComparison>,
}

#[derive(Debug, Clone, Copy)]
pub struct CompareOptions {
    /// Decision threshold for the old/preoperative model; None recomputes
    /// the Youden point on the supplied scores.
    pub threshold_old: Option<f64>,
    /// Same for the new/postoperative model.
    pub threshold_new: Option<f64>,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            threshold_old: None,
            threshold_new: None,
            n_boot: 1000,
            seed: 0,
        }
    }
}

fn evaluate_model(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
    n_boot: usize,
    seed: u64,
) -> Result<(ModelEvaluation, BootstrapCi, BootstrapCi, BootstrapCi)> {
    let confusion = confusion_metrics(scores, labels, threshold)?;
    let auroc_ci = bootstrap_ci(scores, labels, MetricKind::Auroc, n_boot, seed)?;
    let auprc_ci = bootstrap_ci(scores, labels, MetricKind::Auprc, n_boot, seed)?;
    let acc_ci = bootstrap_ci(scores, labels, MetricKind::AccuracyAt(threshold), n_boot, seed)?;
    let eval = ModelEvaluation {
        threshold,
        confusion,
        auroc: (&auroc_ci).into(),
        auprc: (&auprc_ci).into(),
        accuracy: (&acc_ci).into(),
    };
    Ok((eval, auroc_ci, auprc_ci, acc_ci))
}

/// Pair replicate metrics (same resample streams on both sides, so replicate
/// r of each side saw the same cases) and test the differences.
fn paired_p(a: &BootstrapCi, b: &BootstrapCi) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (va, vb) in a.replicates.iter().zip(&b.replicates) {
        if let (Some(va), Some(vb)) = (va, vb) {
            xs.push(*va);
            ys.push(*vb);
        }
    }
    Ok(wilcoxon_signed_rank(&xs, &ys)?.p_value)
}

/// Compare an old (preoperative) and new (postoperative) model on aligned
/// scores for one outcome.
pub fn compare_models(
    scores_old: &[f64],
    scores_new: &[f64],
    labels: &[u8],
    outcome: &str,
    options: &CompareOptions,
) -> Result<OutcomeComparison> {
    if scores_old.len() != scores_new.len() || scores_old.len() != labels.len() {
        return Err(Error::Alignment(format!(
            "score/label lengths {} / {} / {}",
            scores_old.len(),
            scores_new.len(),
            labels.len()
        )));
    }
    let thr_old = match options.threshold_old {
        Some(t) => t,
        None => youden_threshold(scores_old, labels)?.threshold,
    };
    let thr_new = match options.threshold_new {
        Some(t) => t,
        None => youden_threshold(scores_new, labels)?.threshold,
    };
    // Both sides share the bootstrap seed, hence the resample index streams.
    let (preop, old_auroc, old_auprc, old_acc) =
        evaluate_model(scores_old, labels, thr_old, options.n_boot, options.seed)?;
    let (postop, new_auroc, new_auprc, new_acc) =
        evaluate_model(scores_new, labels, thr_new, options.n_boot, options.seed)?;

    let identical = scores_old == scores_new && thr_old == thr_new;
    let p_values = if identical {
        // degenerate self-comparison: every replicate difference is zero
        PairedPValues {
            auroc: 1.0,
            auprc: 1.0,
            accuracy: 1.0,
        }
    } else {
        PairedPValues {
            auroc: paired_p(&old_auroc, &new_auroc)?,
            auprc: paired_p(&old_auprc, &new_auprc)?,
            accuracy: paired_p(&old_acc, &new_acc)?,
        }
    };

    let nri = nri_with_ci(
        scores_old,
        scores_new,
        labels,
        thr_old,
        thr_new,
        options.n_boot,
        options.seed,
    )?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    Ok(OutcomeComparison {
        outcome: outcome.to_string(),
        n_cases: labels.len(),
        prevalence: n_pos as f64 / labels.len() as f64,
        preop,
        postop,
        p_values,
        nri,
    })
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => fmt3(v),
        None => "NA".into(),
    }
}

fn fmt_ci(m: &MetricWithCi) -> String {
    format!("{} ({}-{})", fmt3(m.value), fmt3(m.lo), fmt3(m.hi))
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

/// Aligned-text rendering mirroring the Table 2 column set plus the Table 3
/// NRI block.
pub fn render_report_text(report: &ComparisonReport) -> String {
    let mut out = String::new();
    let headers = [
        "Complication",
        "Model",
        "Sensitivity",
        "Specificity",
        "NPV",
        "PPV",
        "Accuracy",
        "AUROC",
        "AUPRC",
    ];
    let widths = [28, 14, 12, 12, 8, 8, 22, 22, 22];
    let pad = |s: &str, w: usize| format!("{s:<w$}");
    out.push_str("Performance metrics (preoperative vs postoperative models)\n");
    for (h, w) in headers.iter().zip(widths) {
        out.push_str(&pad(h, w));
    }
    out.push('\n');
    for cmp in &report.outcomes {
        for (model, eval) in [("preoperative", &cmp.preop), ("postoperative", &cmp.postop)] {
            let name = if model == "preoperative" {
                cmp.outcome.as_str()
            } else {
                ""
            };
            let cells = [
                name.to_string(),
                model.to_string(),
                fmt_opt(eval.confusion.sensitivity),
                fmt_opt(eval.confusion.specificity),
                fmt_opt(eval.confusion.npv),
                fmt_opt(eval.confusion.ppv),
                fmt_ci(&eval.accuracy),
                fmt_ci(&eval.auroc),
                fmt_ci(&eval.auprc),
            ];
            for (c, w) in cells.iter().zip(widths) {
                out.push_str(&pad(c, w));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "{}p-values (paired {}): AUROC {}, AUPRC {}, accuracy {}\n",
            " ".repeat(widths[0]),
            report.paired_test,
            fmt_p(cmp.p_values.auroc),
            fmt_p(cmp.p_values.auprc),
            fmt_p(cmp.p_values.accuracy),
        ));
    }
    out.push('\n');
    out.push_str("Net reclassification improvement\n");
    let nri_headers = ["Complication", "NRI (95% CI)", "P-value", "Event %", "Non-Event %", "Overall %"];
    let nri_widths = [28, 24, 10, 10, 12, 10];
    for (h, w) in nri_headers.iter().zip(nri_widths) {
        out.push_str(&pad(h, w));
    }
    out.push('\n');
    for cmp in &report.outcomes {
        let nri = &cmp.nri;
        let ci = nri
            .ci
            .map(|(lo, hi)| format!("{} ({}-{})", fmt3(nri.nri), fmt3(lo), fmt3(hi)))
            .unwrap_or_else(|| fmt3(nri.nri));
        let p = nri.p_value.map(fmt_p).unwrap_or_else(|| "NA".into());
        let cells = [
            cmp.outcome.clone(),
            ci,
            p,
            format!("{:.1}", nri.event_improvement * 100.0),
            format!("{:.1}", nri.nonevent_improvement * 100.0),
            format!("{:.1}", nri.overall_improvement * 100.0),
        ];
        for (c, w) in cells.iter().zip(nri_widths) {
            out.push_str(&pad(c, w));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn paired_scores(n: usize, lift: f64, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<u8>) {
        let mut rng = crate::rng::stream(seed, 77);
        let mut old = Vec::new();
        let mut new = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let y = if rng.gen::<f64>() < 0.3 { 1u8 } else { 0 };
            let base: f64 = rng.gen::<f64>() * 0.6;
            old.push((base + 0.25 * y as f64).min(1.0));
            new.push((base + (0.25 + lift) * y as f64).min(1.0));
            labels.push(y);
        }
        (old, new, labels)
    }

    #[test]
    fn self_comparison_is_null() {
        let (old, _, labels) = paired_scores(150, 0.0, 1);
        let options = CompareOptions {
            n_boot: 200,
            seed: 9,
            ..Default::default()
        };
        let cmp = compare_models(&old, &old, &labels, "icu_gt_48h", &options).unwrap();
        assert_eq!(cmp.p_values.auroc, 1.0);
        assert_eq!(cmp.p_values.auprc, 1.0);
        assert_eq!(cmp.nri.nri, 0.0);
    }

    #[test]
    fn planted_lift_detected() {
        let (old, new, labels) = paired_scores(400, 0.35, 2);
        let options = CompareOptions {
            n_boot: 300,
            seed: 4,
            ..Default::default()
        };
        let cmp = compare_models(&old, &new, &labels, "mv_gt_48h", &options).unwrap();
        assert!(cmp.postop.auroc.value > cmp.preop.auroc.value);
        assert!(cmp.p_values.auroc < 0.01);
        assert!(cmp.p_values.auprc < 0.01);
    }

    #[test]
    fn report_text_has_table_columns() {
        let (old, new, labels) = paired_scores(200, 0.2, 3);
        let options = CompareOptions {
            n_boot: 100,
            seed: 5,
            ..Default::default()
        };
        let cmp = compare_models(&old, &new, &labels, "icu_gt_48h", &options).unwrap();
        let report = ComparisonReport {
            n_boot: 100,
            seed: 5,
            paired_test: "Wilcoxon signed-rank on bootstrap replicates".into(),
            outcomes: vec![cmp],
        };
        let text = render_report_text(&report);
        for col in [
            "Sensitivity",
            "Specificity",
            "NPV",
            "PPV",
            "Accuracy",
            "AUROC",
            "AUPRC",
            "NRI (95% CI)",
            "Event %",
            "Non-Event %",
            "Overall %",
        ] {
            assert!(text.contains(col), "missing column {col}");
        }
    }
}
