//! Intraoperative channel cleaning and statistical featurization.
//!
//! Cleaning order: duplicate-time samples are averaged, out-of-range samples
//! removed, then spikes (samples deviating from the rolling median by more
//! than `mad_multiplier` times the channel MAD) are replaced by the channel
//! median. An empty result is valid and signals full imputation downstream.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::{Sample, TimeSeriesChannel};
use crate::stats::{mad, mean, median, population_variance, sample_variance};

/// Window length in seconds for long-term variability (variance of
/// non-overlapping window means).
pub const LONG_TERM_WINDOW_S: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeParams {
    /// Rolling-median window, in samples (centered).
    pub window: usize,
    /// Deviation threshold as a multiple of the channel MAD.
    pub mad_multiplier: f64,
}

impl Default for SpikeParams {
    fn default() -> Self {
        SpikeParams {
            window: 5,
            mad_multiplier: 6.0,
        }
    }
}

fn rolling_median(values: &[f64], center: usize, window: usize) -> f64 {
    let half = window / 2;
    let lo = center.saturating_sub(half);
    let hi = (center + half).min(values.len() - 1);
    median(&values[lo..=hi])
}

pub fn clean_timeseries(
    channel: &TimeSeriesChannel,
    range: Option<(f64, f64)>,
    spike: &SpikeParams,
) -> TimeSeriesChannel {
    // average duplicate timestamps
    let mut samples = channel.samples.clone();
    samples.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    let mut deduped: Vec<Sample> = Vec::with_capacity(samples.len());
    let mut i = 0;
    while i < samples.len() {
        let mut j = i;
        while j + 1 < samples.len() && samples[j + 1].time_s == samples[i].time_s {
            j += 1;
        }
        let value = mean(
            &samples[i..=j]
                .iter()
                .map(|s| s.value)
                .collect::<Vec<f64>>(),
        );
        deduped.push(Sample {
            time_s: samples[i].time_s,
            value,
        });
        i = j + 1;
    }

    // drop out-of-range samples
    let in_range: Vec<Sample> = match range {
        Some((lo, hi)) => deduped
            .into_iter()
            .filter(|s| s.value >= lo && s.value <= hi)
            .collect(),
        None => deduped,
    };
    if in_range.is_empty() {
        return TimeSeriesChannel {
            name: channel.name.clone(),
            samples: Vec::new(),
        };
    }

    // Replace spikes with the encounter median. Replacement shrinks the MAD,
    // which can expose further samples, so the pass repeats until the series
    // is stable; that fixpoint is what makes cleaning idempotent.
    let mut current = in_range;
    for _ in 0..100 {
        let values: Vec<f64> = current.iter().map(|s| s.value).collect();
        let channel_median = median(&values);
        let threshold = spike.mad_multiplier * mad(&values);
        let mut changed = false;
        current = current
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let local = rolling_median(&values, i, spike.window);
                if (s.value - local).abs() > threshold && s.value != channel_median {
                    changed = true;
                    Sample {
                        time_s: s.time_s,
                        value: channel_median,
                    }
                } else {
                    *s
                }
            })
            .collect();
        if !changed {
            break;
        }
    }
    TimeSeriesChannel {
        name: channel.name.clone(),
        samples: current,
    }
}

/// Statistical summary of one cleaned channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsFeatures {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation (0 for a single sample).
    pub sd: f64,
    /// Short-term variability: mean of squared successive differences.
    pub short_term_var: f64,
    /// Long-term variability: variance of non-overlapping 5-minute window
    /// means.
    pub long_term_var: f64,
    /// Fraction of time spent inside each band, piecewise-constant
    /// interpolation; aligned with the `bands` argument.
    pub band_fractions: Vec<f64>,
}

/// Ordered feature names for one channel given its band count.
pub fn ts_feature_names(channel: &str, n_bands: usize) -> Vec<String> {
    let mut names = vec![
        format!("{channel}_min"),
        format!("{channel}_max"),
        format!("{channel}_mean"),
        format!("{channel}_sd"),
        format!("{channel}_stv"),
        format!("{channel}_ltv"),
    ];
    for i in 0..n_bands {
        names.push(format!("{channel}_band{i}_frac"));
    }
    names
}

/// Extract features from a cleaned channel. Returns None when the channel is
/// empty, flagging every feature missing for downstream median imputation.
pub fn extract_ts_features(
    channel: &TimeSeriesChannel,
    bands: &[(f64, f64)],
) -> Option<TsFeatures> {
    if channel.samples.is_empty() {
        return None;
    }
    let values: Vec<f64> = channel.samples.iter().map(|s| s.value).collect();
    let times: Vec<f64> = channel.samples.iter().map(|s| s.time_s).collect();
    let n = values.len();

    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let avg = mean(&values);
    let sd = sample_variance(&values).sqrt();

    let short_term_var = if n >= 2 {
        values
            .windows(2)
            .map(|w| (w[1] - w[0]) * (w[1] - w[0]))
            .sum::<f64>()
            / (n as f64 - 1.0)
    } else {
        0.0
    };

    // non-overlapping window means keyed by floor(t / window)
    let mut windows: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for (t, v) in times.iter().zip(&values) {
        windows
            .entry((t / LONG_TERM_WINDOW_S).floor() as i64)
            .or_default()
            .push(*v);
    }
    let window_means: Vec<f64> = windows.values().map(|vs| mean(vs)).collect();
    let long_term_var = population_variance(&window_means);

    let band_fractions = bands
        .iter()
        .map(|&(lo, hi)| fraction_of_time(&times, &values, lo, hi))
        .collect();

    Some(TsFeatures {
        min,
        max,
        mean: avg,
        sd,
        short_term_var,
        long_term_var,
        band_fractions,
    })
}

/// Fraction of time with value in [lo, hi] under piecewise-constant (last
/// observation carried forward) interpolation. Each sample holds until the
/// next one; the final sample is extended by the preceding gap, so equally
/// spaced samples weigh equally. A single sample is an indicator.
fn fraction_of_time(times: &[f64], values: &[f64], lo: f64, hi: f64) -> f64 {
    let n = times.len();
    let in_band = |v: f64| v >= lo && v <= hi;
    if n == 1 {
        return if in_band(values[0]) { 1.0 } else { 0.0 };
    }
    let tail = times[n - 1] - times[n - 2];
    let mut total = 0.0;
    let mut inside = 0.0;
    for i in 0..n {
        let hold = if i + 1 < n {
            times[i + 1] - times[i]
        } else {
            tail
        };
        total += hold;
        if in_band(values[i]) {
            inside += hold;
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        // all samples share one timestamp after degenerate input; fall back
        // to the sample fraction
        values.iter().filter(|&&v| in_band(v)).count() as f64 / n as f64
    }
}

impl TsFeatures {
    /// Flatten to the (name, value) pairs used in the transformer output
    /// schema.
    pub fn named(&self, channel: &str) -> Vec<(String, f64)> {
        let mut out = vec![
            (format!("{channel}_min"), self.min),
            (format!("{channel}_max"), self.max),
            (format!("{channel}_mean"), self.mean),
            (format!("{channel}_sd"), self.sd),
            (format!("{channel}_stv"), self.short_term_var),
            (format!("{channel}_ltv"), self.long_term_var),
        ];
        for (i, f) in self.band_fractions.iter().enumerate() {
            out.push((format!("{channel}_band{i}_frac"), *f));
        }
        out
    }
}
