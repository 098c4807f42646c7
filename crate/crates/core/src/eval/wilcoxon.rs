//! Two-sided Wilcoxon signed-rank test for paired samples.
//!
//! The exact null distribution (all 2^n sign assignments of the midranks,
//! computed by dynamic programming over doubled ranks) is used for n <= 25;
//! larger samples use the normal approximation with tie correction and a
//! continuity correction.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(W+, W-), the conventional reported statistic.
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs remaining after zero-difference removal.
    pub n_used: usize,
    pub exact: bool,
}

/// Paired two-sided test on differences b - a. Zero differences are removed;
/// if all differences are zero the result is p = 1.0 by convention.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!(
            "paired samples of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| y - x)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n_used: 0,
            exact: true,
        });
    }
    if diffs.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "{} nonzero differences, need at least 5",
            diffs.len()
        )));
    }
    let n = diffs.len();
    let (w_pos, w_neg, doubled_ranks, tie_sizes) = rank_differences(&diffs);
    let (p_value, exact) = if n <= EXACT_LIMIT {
        (exact_p(&doubled_ranks, w_pos), true)
    } else {
        (normal_approx_p(n, &tie_sizes, w_pos), false)
    };
    Ok(WilcoxonResult {
        statistic: w_pos.min(w_neg),
        p_value,
        n_used: n,
        exact,
    })
}

/// Midranks of |d|; returns (W+, W-, doubled ranks, tie group sizes).
fn rank_differences(diffs: &[f64]) -> (f64, f64, Vec<u64>, Vec<usize>) {
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diffs[a].abs().total_cmp(&diffs[b].abs()));

    let mut w_pos = 0.0;
    let mut doubled = vec![0u64; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        ties.push(j - i + 1);
        let doubled_midrank = (i + j + 2) as u64; // 2 * ((i + j) / 2 + 1)
        for &k in &order[i..=j] {
            doubled[k] = doubled_midrank;
            if diffs[k] > 0.0 {
                w_pos += doubled_midrank as f64 / 2.0;
            }
        }
        i = j + 1;
    }
    let total = (n * (n + 1)) as f64 / 2.0;
    (w_pos, total - w_pos, doubled, ties)
}

/// Exact two-sided p over the 2^n equally likely sign assignments,
/// conditional on the observed |d| ranks (so ties are handled exactly).
fn exact_p(doubled_ranks: &[u64], w_pos: f64) -> f64 {
    let n = doubled_ranks.len();
    let total: u64 = doubled_ranks.iter().sum();
    // counts[s] = number of sign assignments whose doubled W+ equals s
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    for &r in doubled_ranks {
        for s in (r as usize..counts.len()).rev() {
            counts[s] += counts[s - r as usize];
        }
    }
    let w2 = (2.0 * w_pos).round() as usize;
    let le: u64 = counts[..=w2].iter().sum();
    let ge: u64 = counts[w2..].iter().sum();
    let assignments = (1u64) << n;
    let p = 2.0 * (le.min(ge) as f64) / assignments as f64;
    p.min(1.0)
}

/// Normal approximation with tie correction and continuity correction.
fn normal_approx_p(n: usize, tie_sizes: &[usize], w_pos: f64) -> f64 {
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes
        .iter()
        .map(|&t| {
            let t = t as f64;
            (t * t * t - t) / 48.0
        })
        .sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    let diff = w_pos - mu;
    let corrected = if diff > 0.0 {
        diff - 0.5
    } else if diff < 0.0 {
        diff + 0.5
    } else {
        return 1.0;
    };
    let z = corrected / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Brute-force enumeration of all 2^n sign assignments, exact arithmetic
    /// on doubled ranks.
    fn enumeration_p(diffs: &[f64]) -> f64 {
        let (w_pos, _, doubled, _) = rank_differences(diffs);
        let n = diffs.len();
        let w2_obs = (2.0 * w_pos).round() as u64;
        let mut le = 0u64;
        let mut ge = 0u64;
        for mask in 0u64..(1 << n) {
            let w2: u64 = (0..n)
                .filter(|&i| mask & (1 << i) != 0)
                .map(|i| doubled[i])
                .sum();
            if w2 <= w2_obs {
                le += 1;
            }
            if w2 >= w2_obs {
                ge += 1;
            }
        }
        (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn identical_samples_p_one() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = wilcoxon_signed_rank(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.n_used, 0);
    }

    #[test]
    fn extreme_ordering_n6() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.p_value, 2.0 / 64.0);
        assert_eq!(r.statistic, 0.0);
        assert!(r.exact);
    }

    #[test]
    fn too_few_nonzero_is_error() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [1.0, 2.0, 3.0, 4.0, 9.0];
        assert!(wilcoxon_signed_rank(&a, &b).is_err());
    }

    #[test]
    fn exact_matches_enumeration_with_ties() {
        let mut rng = crate::rng::stream(3, 1);
        for trial in 0..60 {
            let n = 5 + (trial % 8);
            // discrete grid forces tied |d|
            let diffs: Vec<f64> = (0..n)
                .map(|_| {
                    let mag = rng.gen_range(1..=4) as f64;
                    if rng.gen::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            let a = vec![0.0; n];
            let r = wilcoxon_signed_rank(&a, &diffs).unwrap();
            let oracle = enumeration_p(&diffs);
            assert_eq!(r.p_value, oracle, "trial {trial}: diffs {diffs:?}");
        }
    }

    #[test]
    fn normal_approx_close_to_exact_at_n20() {
        let mut rng = crate::rng::stream(9, 2);
        for trial in 0..20 {
            let n = 20;
            let diffs: Vec<f64> = (0..n)
                .map(|_| {
                    let mag = rng.gen_range(1..=10) as f64;
                    if rng.gen::<f64>() < 0.6 {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            let (w_pos, _, doubled, ties) = rank_differences(&diffs);
            let exact = exact_p(&doubled, w_pos);
            let approx = normal_approx_p(n, &ties, w_pos);
            assert!(
                (exact - approx).abs() < 0.01,
                "trial {trial}: exact {exact} vs approx {approx}"
            );
        }
    }
}
