//! Conditional log-ratio encoding for multi-level nominal features: the log
//! of a category's prevalence among event cases over its prevalence among
//! non-event cases, with add-k pseudo-counts so every encoding is finite.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::MISSING_TOKEN;

/// Pseudo-count added to both prevalence numerators (and twice to the
/// denominators). Small enough to preserve well-supported ratios to three
/// decimals.
pub const SMOOTHING_K: f64 = 0.5;

/// Smoothed log(prev_event / prev_nonevent) for a category observed in
/// `count_event` of `n_event` event cases and `count_nonevent` of
/// `n_nonevent` non-event cases.
pub fn log_ratio_encoding(
    count_event: usize,
    count_nonevent: usize,
    n_event: usize,
    n_nonevent: usize,
) -> f64 {
    let prev_event = (count_event as f64 + SMOOTHING_K) / (n_event as f64 + 2.0 * SMOOTHING_K);
    let prev_nonevent =
        (count_nonevent as f64 + SMOOTHING_K) / (n_nonevent as f64 + 2.0 * SMOOTHING_K);
    (prev_event / prev_nonevent).ln()
}

/// Fitted encoder for one nominal feature. Missing values form their own
/// category under [`MISSING_TOKEN`]; categories unseen in training map to
/// the neutral `fallback`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NominalEncoder {
    pub encodings: BTreeMap<String, f64>,
    pub fallback: f64,
}

impl NominalEncoder {
    /// Fit from per-case category observations (None = missing) and labels.
    pub fn fit(values: &[Option<&str>], labels: &[u8]) -> NominalEncoder {
        debug_assert_eq!(values.len(), labels.len());
        let n_event = labels.iter().filter(|&&y| y == 1).count();
        let n_nonevent = labels.len() - n_event;
        let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for (value, &label) in values.iter().zip(labels) {
            let key = value.unwrap_or(MISSING_TOKEN);
            let entry = counts.entry(key.to_string()).or_insert((0, 0));
            if label == 1 {
                entry.0 += 1;
            } else {
                entry.1 += 1;
            }
        }
        if counts.len() == 1 && counts.contains_key(MISSING_TOKEN) {
            log::warn!("nominal feature entirely missing in training data; encoder collapses to its fallback");
        }
        let encodings = counts
            .into_iter()
            .map(|(category, (ce, cne))| {
                (category, log_ratio_encoding(ce, cne, n_event, n_nonevent))
            })
            .collect();
        NominalEncoder {
            encodings,
            fallback: 0.0,
        }
    }

    pub fn encode(&self, value: Option<&str>) -> f64 {
        let key = value.unwrap_or(MISSING_TOKEN);
        self.encodings.get(key).copied().unwrap_or(self.fallback)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_six_vs_eight_percent_example() {
        // a category held by 6% of 5000 event cases and 8% of 5000 non-event
        // cases encodes to log(0.06/0.08) within smoothing error
        let enc = log_ratio_encoding(300, 400, 5000, 5000);
        assert!((enc - (-0.2877)).abs() < 0.001, "enc={enc}");
    }

    #[test]
    fn zero_count_is_finite_and_minimal_at_fixed_support() {
        // categories with equal non-event support: the one absent from event
        // cases must encode strictly lowest
        let absent = log_ratio_encoding(0, 50, 1000, 2000);
        assert!(absent.is_finite());
        for count_event in 1..20 {
            let other = log_ratio_encoding(count_event, 50, 1000, 2000);
            assert!(absent < other);
        }
    }

    #[test]
    fn monotone_in_prevalences() {
        for ce in 0..30 {
            assert!(
                log_ratio_encoding(ce, 10, 100, 200) < log_ratio_encoding(ce + 1, 10, 100, 200)
            );
            assert!(
                log_ratio_encoding(10, ce, 100, 200) > log_ratio_encoding(10, ce + 1, 100, 200)
            );
        }
    }

    #[test]
    fn missing_is_a_distinct_category() {
        let values = [Some("a"), None, Some("a"), None, Some("b"), Some("b")];
        let labels = [1, 1, 0, 0, 1, 0];
        let enc = NominalEncoder::fit(&values, &labels);
        assert!(enc.encodings.contains_key(MISSING_TOKEN));
        assert_eq!(enc.encode(None), enc.encodings[MISSING_TOKEN]);
    }

    #[test]
    fn unseen_category_maps_to_fallback() {
        let values = [Some("a"), Some("b")];
        let labels = [1, 0];
        let enc = NominalEncoder::fit(&values, &labels);
        assert_eq!(enc.encode(Some("zzz")), 0.0);
    }

    #[test]
    fn identical_prevalence_identical_encoding() {
        let values = [Some("x"), Some("y"), Some("x"), Some("y")];
        let labels = [1, 1, 0, 0];
        let enc = NominalEncoder::fit(&values, &labels);
        assert_eq!(enc.encodings["x"], enc.encodings["y"]);
    }
}
