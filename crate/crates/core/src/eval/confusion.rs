//! Threshold-based confusion summary. The classification rule is
//! score >= threshold => positive (ties classify high).

use serde::{Deserialize, Serialize};

use super::check_aligned;
use crate::error::Result;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub threshold: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
    /// tp / (tp + fn); None when no positives exist.
    pub sensitivity: Option<f64>,
    /// tn / (tn + fp); None when no negatives exist.
    pub specificity: Option<f64>,
    /// tp / (tp + fp); None when nothing is predicted positive.
    pub ppv: Option<f64>,
    /// tn / (tn + fn); None when nothing is predicted negative.
    pub npv: Option<f64>,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionSummary> {
    check_aligned(scores, labels)?;
    let mut tp = 0;
    let mut fp = 0;
    let mut tn = 0;
    let mut fn_ = 0;
    for (&score, &label) in scores.iter().zip(labels) {
        match (score >= threshold, label == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ConfusionSummary {
        threshold,
        true_pos: tp,
        false_pos: fp,
        true_neg: tn,
        false_neg: fn_,
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        ppv: ratio(tp, tp + fp),
        npv: ratio(tn, tn + fn_),
        accuracy: (tp + tn) as f64 / scores.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_classifier_all_ones() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        let c = confusion_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(c.sensitivity, Some(1.0));
        assert_eq!(c.specificity, Some(1.0));
        assert_eq!(c.ppv, Some(1.0));
        assert_eq!(c.npv, Some(1.0));
        assert_eq!(c.accuracy, 1.0);
    }

    #[test]
    fn mortality_row_shape() {
        // tp=85, fn=15, tn=880, fp=120: sens 0.85, spec 0.88, acc ~0.8773
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..85 {
            scores.push(0.9);
            labels.push(1);
        }
        for _ in 0..15 {
            scores.push(0.1);
            labels.push(1);
        }
        for _ in 0..880 {
            scores.push(0.1);
            labels.push(0);
        }
        for _ in 0..120 {
            scores.push(0.9);
            labels.push(0);
        }
        let c = confusion_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(c.sensitivity, Some(0.85));
        assert_eq!(c.specificity, Some(0.88));
        assert!((c.accuracy - 965.0 / 1100.0).abs() < 1e-12);
    }

    #[test]
    fn zero_predicted_positive_gives_no_ppv() {
        let c = confusion_metrics(&[0.1, 0.2], &[1, 0], 0.9).unwrap();
        assert_eq!(c.ppv, None);
        assert_eq!(c.true_pos + c.false_pos, 0);
    }

    #[test]
    fn tie_classifies_high() {
        let c = confusion_metrics(&[0.5], &[1], 0.5).unwrap();
        assert_eq!(c.true_pos, 1);
    }

    proptest! {
        #[test]
        fn count_identities(
            raw in proptest::collection::vec((0.0f64..1.0, 0u8..2), 1..80),
            threshold in 0.0f64..1.0,
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, y)| *y).collect();
            let c = confusion_metrics(&scores, &labels, threshold).unwrap();
            let n_pos = labels.iter().filter(|&&y| y == 1).count();
            prop_assert_eq!(c.true_pos + c.false_neg, n_pos);
            prop_assert_eq!(c.true_neg + c.false_pos, labels.len() - n_pos);
        }
    }
}
