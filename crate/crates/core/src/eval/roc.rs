//! ROC analysis: AUROC by rank sums, the ROC curve, and the Youden
//! operating point.

use serde::{Deserialize, Serialize};

use super::{check_aligned, class_counts};
use crate::error::{Error, Result};

/// AUROC as the Mann-Whitney statistic P(score+ > score-) + 0.5 P(tie),
/// computed via midrank sums in O(n log n).
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_aligned(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs both classes present".into(),
        ));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank of the tie group [i, j]
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// One ROC operating point; `threshold` is the lowest score still classified
/// positive at this point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Full ROC curve over descending unique score thresholds, anchored at
/// (0,0) and (1,1). The `auc` field integrates the curve by trapezoids,
/// which agrees with the rank-sum AUROC.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    check_aligned(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC curve needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let mut j = i;
        while j < order.len() && scores[order[j]] == threshold {
            if labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold,
        });
        i = j;
    }
    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0;
    }
    Ok(RocCurve { points, auc })
}

/// The Youden operating point: threshold maximizing J = sens + spec - 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct YoudenPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub j: f64,
}

/// Scan all observed-score thresholds (classification rule: score >= t is
/// positive) and return the J-maximizing point. Ties resolve to the lowest
/// threshold, favoring sensitivity.
pub fn youden_threshold(scores: &[f64], labels: &[u8]) -> Result<YoudenPoint> {
    check_aligned(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "Youden threshold needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Walking thresholds in ascending order and demanding strict improvement
    // keeps the lowest threshold among ties.
    let mut best: Option<YoudenPoint> = None;
    let mut pos_below = 0usize; // labels positive with score < t
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // at threshold t = this score: predicted positive are scores >= t
        let tp = n_pos - pos_below;
        let fp = n_neg - neg_below;
        let sens = tp as f64 / n_pos as f64;
        let spec = (n_neg - fp) as f64 / n_neg as f64;
        let j = sens + spec - 1.0;
        if best.map_or(true, |b| j > b.j) {
            best = Some(YoudenPoint {
                threshold,
                sensitivity: sens,
                specificity: spec,
                j,
            });
        }
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
    Ok(best.expect("nonempty input"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// O(n^2) pairwise oracle: wins + half-ties over all (pos, neg) pairs.
    pub(crate) fn auroc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut ties = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            if yi != 1 {
                continue;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yj != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    ties += 0.5;
                }
            }
        }
        (wins + ties) / pairs
    }

    #[test]
    fn perfectly_separated_is_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        assert_eq!(auroc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_is_half() {
        let scores = [0.5; 6];
        let labels = [1, 0, 1, 0, 1, 0];
        assert_eq!(auroc(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn four_point_example() {
        // 3 of 4 (pos, neg) pairs correctly ordered
        let labels = [1, 1, 0, 0];
        let scores = [0.9, 0.4, 0.6, 0.2];
        assert_eq!(auroc(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn curve_anchored_and_monotone() {
        let scores = [0.9, 0.4, 0.6, 0.2, 0.6];
        let labels = [1, 0, 1, 0, 0];
        let curve = roc_curve(&scores, &labels).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in curve.points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr);
            assert!(w[1].tpr >= w[0].tpr);
        }
        assert!((curve.auc - auroc(&scores, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn youden_perfect_separation() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1, 1, 0, 0];
        let point = youden_threshold(&scores, &labels).unwrap();
        assert_eq!(point.j, 1.0);
        assert!(point.threshold > 0.2 && point.threshold <= 0.8);
    }

    #[test]
    fn youden_all_ties() {
        let point = youden_threshold(&[0.5; 4], &[1, 0, 1, 0]).unwrap();
        assert_eq!(point.j, 0.0);
        assert_eq!(point.threshold, 0.5);
    }

    /// Exhaustive threshold scan oracle for Youden.
    fn youden_scan(scores: &[f64], labels: &[u8]) -> (f64, f64) {
        let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
        let n_neg = labels.len() as f64 - n_pos;
        let mut best_j = f64::NEG_INFINITY;
        let mut best_t = f64::NAN;
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        for &t in &thresholds {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|(&s, &y)| s >= t && y == 1)
                .count() as f64;
            let fp = scores
                .iter()
                .zip(labels)
                .filter(|(&s, &y)| s >= t && y == 0)
                .count() as f64;
            let j = tp / n_pos + (n_neg - fp) / n_neg - 1.0;
            if j > best_j {
                best_j = j;
                best_t = t;
            }
        }
        (best_t, best_j)
    }

    #[test]
    fn youden_six_point_mixed_case() {
        let scores = [0.1, 0.3, 0.3, 0.5, 0.7, 0.9];
        let labels = [0, 0, 1, 0, 1, 1];
        let point = youden_threshold(&scores, &labels).unwrap();
        let (t, j) = youden_scan(&scores, &labels);
        assert_eq!(point.threshold, t);
        assert_eq!(point.j, j);
    }

    proptest! {
        #[test]
        fn auroc_matches_pairwise_oracle(
            raw in proptest::collection::vec((0u8..4, 0u8..2), 2..60)
        ) {
            // coarse score grid forces plenty of ties
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, y)| *y).collect();
            let n_pos = labels.iter().filter(|&&y| y == 1).count();
            prop_assume!(n_pos > 0 && n_pos < labels.len());
            let fast = auroc(&scores, &labels).unwrap();
            let slow = auroc_pairwise(&scores, &labels);
            prop_assert_eq!(fast, slow);
        }

        #[test]
        fn auroc_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0.0f64..1.0, 0u8..2), 4..50),
            scale in 0.1f64..5.0,
            shift in -3.0f64..3.0,
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, y)| *y).collect();
            let n_pos = labels.iter().filter(|&&y| y == 1).count();
            prop_assume!(n_pos > 0 && n_pos < labels.len());
            // strictly monotone map: affine then exp
            let mapped: Vec<f64> = scores.iter().map(|s| (s * scale + shift).exp()).collect();
            let a = auroc(&scores, &labels).unwrap();
            let b = auroc(&mapped, &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn youden_attains_scan_maximum(
            raw in proptest::collection::vec((0u8..6, 0u8..2), 4..50)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 6.0).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, y)| *y).collect();
            let n_pos = labels.iter().filter(|&&y| y == 1).count();
            prop_assume!(n_pos > 0 && n_pos < labels.len());
            let point = youden_threshold(&scores, &labels).unwrap();
            let (t, j) = youden_scan(&scores, &labels);
            prop_assert_eq!(point.j, j);
            prop_assert_eq!(point.threshold, t);
        }
    }
}
