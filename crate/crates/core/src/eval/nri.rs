//! Net reclassification improvement between two risk models, each with its
//! own low/high cut-off.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bootstrap::{ci_from_replicates, resample_indices};
use super::check_aligned;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NriReport {
    /// (events reclassified up - down) / #events. "Up" means low -> high.
    pub event_improvement: f64,
    /// (nonevents reclassified down - up) / #nonevents.
    pub nonevent_improvement: f64,
    /// event_improvement + nonevent_improvement.
    pub nri: f64,
    /// Prevalence-weighted net improvement over all cases.
    pub overall_improvement: f64,
    pub prevalence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
}

/// Assemble the derived aggregates from the two class-level improvements.
pub fn nri_from_components(
    event_improvement: f64,
    nonevent_improvement: f64,
    prevalence: f64,
) -> (f64, f64) {
    let nri = event_improvement + nonevent_improvement;
    let overall =
        prevalence * event_improvement + (1.0 - prevalence) * nonevent_improvement;
    (nri, overall)
}

fn components(
    scores_old: &[f64],
    scores_new: &[f64],
    labels: &[u8],
    thr_old: f64,
    thr_new: f64,
) -> Result<(f64, f64, f64)> {
    check_aligned(scores_old, labels)?;
    check_aligned(scores_new, labels)?;
    let mut event_up = 0i64;
    let mut event_down = 0i64;
    let mut nonevent_up = 0i64;
    let mut nonevent_down = 0i64;
    let mut n_event = 0i64;
    let mut n_nonevent = 0i64;
    for i in 0..labels.len() {
        let old_high = scores_old[i] >= thr_old;
        let new_high = scores_new[i] >= thr_new;
        let up = !old_high && new_high;
        let down = old_high && !new_high;
        if labels[i] == 1 {
            n_event += 1;
            event_up += up as i64;
            event_down += down as i64;
        } else {
            n_nonevent += 1;
            nonevent_up += up as i64;
            nonevent_down += down as i64;
        }
    }
    if n_event == 0 || n_nonevent == 0 {
        return Err(Error::UndefinedMetric(
            "NRI needs both classes present".into(),
        ));
    }
    let event_improvement = (event_up - event_down) as f64 / n_event as f64;
    let nonevent_improvement = (nonevent_down - nonevent_up) as f64 / n_nonevent as f64;
    let prevalence = n_event as f64 / labels.len() as f64;
    Ok((event_improvement, nonevent_improvement, prevalence))
}

/// Point estimate only.
pub fn nri(
    scores_old: &[f64],
    scores_new: &[f64],
    labels: &[u8],
    thr_old: f64,
    thr_new: f64,
) -> Result<NriReport> {
    let (event_improvement, nonevent_improvement, prevalence) =
        components(scores_old, scores_new, labels, thr_old, thr_new)?;
    let (nri, overall) = nri_from_components(event_improvement, nonevent_improvement, prevalence);
    Ok(NriReport {
        event_improvement,
        nonevent_improvement,
        nri,
        overall_improvement: overall,
        prevalence,
        ci: None,
        p_value: None,
    })
}

/// Point estimate plus percentile-bootstrap CI and a two-sided sign-based
/// p-value from the replicate distribution: p = 2 (min(#<=0, #>=0) + 1) /
/// (R + 1), never exactly zero.
pub fn nri_with_ci(
    scores_old: &[f64],
    scores_new: &[f64],
    labels: &[u8],
    thr_old: f64,
    thr_new: f64,
    n_boot: usize,
    seed: u64,
) -> Result<NriReport> {
    let mut report = nri(scores_old, scores_new, labels, thr_old, thr_new)?;
    let n = labels.len();
    let replicates: Vec<Option<f64>> = (0..n_boot as u64)
        .into_par_iter()
        .map(|r| {
            let idx = resample_indices(seed, r, n);
            let so: Vec<f64> = idx.iter().map(|&i| scores_old[i]).collect();
            let sn: Vec<f64> = idx.iter().map(|&i| scores_new[i]).collect();
            let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            components(&so, &sn, &y, thr_old, thr_new)
                .map(|(e, ne, p)| nri_from_components(e, ne, p).0)
                .ok()
        })
        .collect();
    let ci = ci_from_replicates(report.nri, replicates)?;
    let defined = ci.defined();
    let le = defined.iter().filter(|&&v| v <= 0.0).count();
    let ge = defined.iter().filter(|&&v| v >= 0.0).count();
    let p = (2.0 * (le.min(ge) as f64 + 1.0) / (defined.len() as f64 + 1.0)).min(1.0);
    report.ci = Some((ci.lo, ci.hi));
    report.p_value = Some(p);
    Ok(report)
}
