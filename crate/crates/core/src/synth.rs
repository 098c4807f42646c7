//! Deterministic synthetic cohort generator with controllable preoperative
//! and intraoperative signal strength.
//!
//! Each case draws four latent drivers: frailty and acuity (preoperative),
//! hemodynamic instability and ventilatory stress (intraoperative). Tabular
//! features and monitor channels are noisy views of the drivers; outcome
//! labels come from a logistic model over the drivers whose intercept is
//! calibrated by bisection to the target prevalence. When every
//! intraoperative signal is zero the cohort carries no intraoperative
//! features at all, so preoperative and extended models collapse to the
//! same feature set.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{
    CaseRecord, CohortTable, FeatureDef, FeatureKind, FeatureSchema, Outcome, Phase, Sample,
    TimeSeriesChannel, Value,
};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_cases: usize,
    pub prevalence: BTreeMap<Outcome, f64>,
    /// Log-odds weight of the preoperative drivers, per outcome.
    pub preop_signal: BTreeMap<Outcome, f64>,
    /// Log-odds weight of the intraoperative drivers, per outcome.
    pub intraop_signal: BTreeMap<Outcome, f64>,
    pub missingness_rate: f64,
    /// Probability that a channel sample is replaced by an injected in-range
    /// spike.
    pub spike_rate: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let mut prevalence = BTreeMap::new();
        prevalence.insert(Outcome::IcuGt48h, 0.26);
        prevalence.insert(Outcome::MvGt48h, 0.06);
        prevalence.insert(Outcome::NeuroDelirium, 0.16);
        prevalence.insert(Outcome::Mortality, 0.02);
        let signal = |v: f64| Outcome::ALL.iter().map(|o| (*o, v)).collect();
        GeneratorConfig {
            n_cases: 5000,
            prevalence,
            preop_signal: signal(1.0),
            intraop_signal: signal(1.6),
            missingness_rate: 0.05,
            spike_rate: 0.01,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cases == 0 {
            return Err(Error::Sizing("n_cases must be positive".into()));
        }
        for (outcome, p) in &self.prevalence {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(Error::Sizing(format!("prevalence for {outcome} must be in (0,1), got {p}")));
            }
        }
        for rate in [self.missingness_rate, self.spike_rate] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Sizing(format!("rate {rate} outside [0,1]")));
            }
        }
        Ok(())
    }

    pub fn has_intraop_signal(&self) -> bool {
        self.intraop_signal.values().any(|s| *s != 0.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub achieved_prevalence: BTreeMap<Outcome, f64>,
    pub warnings: Vec<String>,
}

/// Fixed per-outcome mixes of (frailty, acuity) and (instability, stress).
fn outcome_mix(outcome: Outcome) -> ([f64; 2], [f64; 2]) {
    match outcome {
        Outcome::IcuGt48h => ([0.8, 0.6], [0.9, 0.44]),
        Outcome::MvGt48h => ([0.5, 0.87], [0.6, 0.8]),
        Outcome::NeuroDelirium => ([0.9, 0.44], [0.7, 0.71]),
        // mortality loads on the same drivers the complications express, so
        // stacked complication probabilities carry its signal
        Outcome::Mortality => ([0.7, 0.71], [0.75, 0.66]),
    }
}

pub fn default_schema(include_intraop: bool) -> FeatureSchema {
    let f = |name: &str, kind: FeatureKind, phase: Phase, range: Option<(f64, f64)>| FeatureDef {
        name: name.into(),
        kind,
        phase,
        allowed_range: range,
    };
    let mut features = vec![
        f("age", FeatureKind::Continuous, Phase::Preoperative, None),
        f("bmi", FeatureKind::Continuous, Phase::Preoperative, None),
        f("serum_creatinine", FeatureKind::Continuous, Phase::Preoperative, Some((0.1, 20.0))),
        f("serum_sodium", FeatureKind::Continuous, Phase::Preoperative, Some((80.0, 190.0))),
        f("serum_hemoglobin", FeatureKind::Continuous, Phase::Preoperative, Some((3.0, 23.0))),
        f("charlson_index", FeatureKind::Continuous, Phase::Preoperative, None),
        f("emergency_admission", FeatureKind::Binary, Phase::Preoperative, None),
        f("diabetes", FeatureKind::Binary, Phase::Preoperative, None),
        f("congestive_heart_failure", FeatureKind::Binary, Phase::Preoperative, None),
        f("insurance", FeatureKind::Nominal, Phase::Preoperative, None),
        f("smoking", FeatureKind::Nominal, Phase::Preoperative, None),
        f("admission_day", FeatureKind::Nominal, Phase::Preoperative, None),
        f("surgeon_id", FeatureKind::Nominal, Phase::Preoperative, None),
        f("primary_procedure", FeatureKind::ProcedureCode, Phase::Preoperative, None),
    ];
    let mut bands = BTreeMap::new();
    if include_intraop {
        features.extend([
            f("surgery_duration_min", FeatureKind::Continuous, Phase::Intraoperative, None),
            f("estimated_blood_loss", FeatureKind::Continuous, Phase::Intraoperative, None),
            f("urine_output", FeatureKind::Continuous, Phase::Intraoperative, None),
            f("nighttime_surgery", FeatureKind::Binary, Phase::Intraoperative, None),
            f("heart_rate", FeatureKind::Timeseries, Phase::Intraoperative, Some((0.0, 300.0))),
            f("sbp", FeatureKind::Timeseries, Phase::Intraoperative, Some((20.0, 300.0))),
            f("spo2", FeatureKind::Timeseries, Phase::Intraoperative, Some((0.0, 100.0))),
            f("temperature", FeatureKind::Timeseries, Phase::Intraoperative, Some((24.0, 45.0))),
        ]);
        bands.insert("heart_rate".into(), vec![(0.0, 60.0), (60.0, 100.0), (100.0, 300.0)]);
        bands.insert("sbp".into(), vec![(20.0, 90.0), (90.0, 140.0), (140.0, 300.0)]);
        bands.insert("spo2".into(), vec![(0.0, 92.0), (92.0, 100.0)]);
        bands.insert("temperature".into(), vec![(24.0, 36.0), (36.0, 38.0), (38.0, 45.0)]);
    }
    FeatureSchema::new(features, bands).expect("builtin schema is valid")
}

struct Latents {
    frailty: f64,
    acuity: f64,
    instability: f64,
    stress: f64,
}

fn gauss(stream: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(stream)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean-reverting walk sampled every 60 s with soft reflection at the given
/// bounds, injected in-range spikes, occasional out-of-range values, and
/// duplicate timestamps.
#[allow(clippy::too_many_arguments)]
fn walk_channel(
    stream: &mut ChaCha8Rng,
    name: &str,
    n_samples: usize,
    mu: f64,
    step_sd: f64,
    soft_lo: f64,
    soft_hi: f64,
    spike: f64,
    out_of_range: f64,
    spike_rate: f64,
) -> TimeSeriesChannel {
    let mut samples = Vec::with_capacity(n_samples + 4);
    let mut level = mu + gauss(stream) * step_sd * 2.0;
    for i in 0..n_samples {
        level += 0.15 * (mu - level) + gauss(stream) * step_sd;
        if level > soft_hi {
            level = 2.0 * soft_hi - level;
        }
        if level < soft_lo {
            level = 2.0 * soft_lo - level;
        }
        level = level.clamp(soft_lo, soft_hi);
        let t = i as f64 * 60.0;
        let roll: f64 = stream.gen();
        let value = if roll < spike_rate {
            (level + spike * (1.0 + 0.5 * stream.gen::<f64>())).clamp(soft_lo - spike.abs() * 2.0, soft_hi + spike.abs() * 2.0)
        } else if roll < spike_rate * 1.2 {
            out_of_range
        } else {
            level
        };
        samples.push(Sample { time_s: t, value });
        if stream.gen::<f64>() < 0.01 {
            // duplicate observation at the same timestamp
            samples.push(Sample {
                time_s: t,
                value: level + gauss(stream) * step_sd * 0.2,
            });
        }
    }
    TimeSeriesChannel {
        name: name.into(),
        samples,
    }
}

fn generate_case(cfg: &GeneratorConfig, index: usize, include_intraop: bool) -> (CaseRecord, Latents) {
    let mut stream = rng::stream(cfg.seed, index as u64);
    let latents = Latents {
        frailty: gauss(&mut stream),
        acuity: gauss(&mut stream),
        instability: gauss(&mut stream),
        stress: gauss(&mut stream),
    };
    let la = &latents;

    // roughly 1 in 17 cases is a second admission of the previous patient
    let patient_idx = if index % 17 == 16 { index - 1 } else { index };
    let case_id = format!("S{index:06}");
    let patient_id = format!("P{patient_idx:06}");
    let admission_id = format!("A{index:06}");
    let surgery_start = stream.gen_range(0.0..730.0);

    let missing = |stream: &mut ChaCha8Rng, rate: f64| stream.gen::<f64>() < rate;
    let mut tabular: HashMap<String, Value> = HashMap::new();
    let put_cont = |tab: &mut HashMap<String, Value>, stream: &mut ChaCha8Rng, name: &str, value: f64, rate: f64| {
        let v = if missing(stream, rate) {
            Value::Missing
        } else {
            Value::Number(value)
        };
        tab.insert(name.into(), v);
    };

    let m = cfg.missingness_rate;
    let age = (57.0 + 12.0 * la.frailty + 8.0 * gauss(&mut stream)).clamp(18.0, 95.0).round();
    put_cont(&mut tabular, &mut stream, "age", age, m);
    let bmi = (28.0 + 4.0 * la.acuity + 3.5 * gauss(&mut stream)).clamp(14.0, 60.0);
    put_cont(&mut tabular, &mut stream, "bmi", bmi, m);
    let creat = (0.15 + 0.45 * la.frailty + 0.3 * gauss(&mut stream)).exp().clamp(0.1, 20.0);
    put_cont(&mut tabular, &mut stream, "serum_creatinine", creat, m);
    let sodium = (138.0 - 1.5 * la.acuity + 3.0 * gauss(&mut stream)).clamp(80.0, 190.0);
    put_cont(&mut tabular, &mut stream, "serum_sodium", sodium, m);
    let hemoglobin = (12.7 - 1.1 * la.frailty + 1.5 * gauss(&mut stream)).clamp(3.0, 23.0);
    put_cont(&mut tabular, &mut stream, "serum_hemoglobin", hemoglobin, m);
    let charlson = (2.0 + 2.0 * la.frailty + 1.0 * gauss(&mut stream)).max(0.0).floor();
    put_cont(&mut tabular, &mut stream, "charlson_index", charlson, m);

    let bern = |stream: &mut ChaCha8Rng, p: f64| Value::Number((stream.gen::<f64>() < p) as u8 as f64);
    tabular.insert("emergency_admission".into(), bern(&mut stream, sigmoid(-1.0 + 1.2 * la.acuity)));
    tabular.insert("diabetes".into(), bern(&mut stream, sigmoid(-1.2 + 0.8 * la.frailty)));
    tabular.insert("congestive_heart_failure".into(), bern(&mut stream, sigmoid(-1.8 + 1.2 * la.frailty)));

    let insurance = if missing(&mut stream, m) {
        Value::Missing
    } else {
        // frailer (older) patients skew toward medicare
        let p_medicare = sigmoid(-0.2 + 0.9 * la.frailty);
        let roll: f64 = stream.gen();
        Value::Token(
            if roll < p_medicare {
                "medicare"
            } else if roll < p_medicare + 0.3 {
                "private"
            } else if roll < p_medicare + 0.45 {
                "medicaid"
            } else {
                "uninsured"
            }
            .into(),
        )
    };
    tabular.insert("insurance".into(), insurance);

    let smoking = if missing(&mut stream, m) {
        Value::Missing
    } else {
        let roll: f64 = stream.gen();
        Value::Token(if roll < 0.43 { "never" } else if roll < 0.77 { "former" } else { "current" }.into())
    };
    tabular.insert("smoking".into(), smoking);

    const DAYS: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];
    tabular.insert("admission_day".into(), Value::Token(DAYS[stream.gen_range(0..7)].into()));
    tabular.insert("surgeon_id".into(), Value::Token(format!("surg{:02}", stream.gen_range(0..30))));

    // procedure family choice loads on acuity; subcode is noise
    const FAMILIES: [&str; 6] = ["38", "45", "79", "36", "01", "55"];
    let family_idx = {
        let shifted = (la.acuity + gauss(&mut stream) * 0.8 + 1.5).max(0.0);
        (shifted / 0.75) as usize % 6
    };
    let code = format!("{}.{}{}", FAMILIES[family_idx], stream.gen_range(1..5), stream.gen_range(0..4));
    tabular.insert("primary_procedure".into(), Value::Token(code));

    let mut channels = Vec::new();
    if include_intraop {
        let duration_min = (110.0 + 30.0 * la.acuity + 25.0 * gauss(&mut stream)).clamp(30.0, 180.0).round();
        put_cont(&mut tabular, &mut stream, "surgery_duration_min", duration_min, 0.0);
        let ebl = (4.0 + 0.8 * la.instability + 0.6 * gauss(&mut stream)).exp().clamp(0.0, 4000.0).round();
        put_cont(&mut tabular, &mut stream, "estimated_blood_loss", ebl, 3.0 * m);
        let urine = (5.0 + 0.5 * la.stress.abs() + 0.5 * gauss(&mut stream)).exp().clamp(0.0, 3000.0).round();
        put_cont(&mut tabular, &mut stream, "urine_output", urine, 3.0 * m);
        tabular.insert("nighttime_surgery".into(), bern(&mut stream, 0.15 + 0.1 * sigmoid(la.acuity)));

        let n_samples = duration_min as usize;
        let drop = m / 2.0;
        if !missing(&mut stream, drop) {
            channels.push(walk_channel(&mut stream, "heart_rate", n_samples, 78.0 + 10.0 * la.instability, 1.8, 40.0, 160.0, 65.0, 350.0, cfg.spike_rate));
        }
        if !missing(&mut stream, drop) {
            channels.push(walk_channel(&mut stream, "sbp", n_samples, 115.0 - 12.0 * la.instability, 2.6, 60.0, 200.0, 70.0, 320.0, cfg.spike_rate));
        }
        if !missing(&mut stream, drop) {
            channels.push(walk_channel(&mut stream, "spo2", n_samples, 97.0 - 1.8 * la.stress, 0.5, 86.0, 99.7, -12.0, 110.0, cfg.spike_rate));
        }
        if !missing(&mut stream, drop) {
            channels.push(walk_channel(&mut stream, "temperature", n_samples, 36.8 - 0.35 * la.stress, 0.06, 34.5, 38.5, 3.0, 50.0, cfg.spike_rate));
        }
    }

    let case = CaseRecord {
        case_id,
        patient_id,
        admission_id,
        surgery_start,
        tabular,
        channels,
        outcomes: BTreeMap::new(),
        external_probs: BTreeMap::new(),
    };
    (case, latents)
}

/// Intercept t with mean(sigmoid(s - t)) = target, by bisection.
fn calibrate_intercept(latent_scores: &[f64], target: f64) -> f64 {
    let mut lo = -60.0;
    let mut hi = 60.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let mean: f64 =
            latent_scores.iter().map(|s| sigmoid(s - mid)).sum::<f64>() / latent_scores.len() as f64;
        if mean > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn generate_cohort(cfg: &GeneratorConfig) -> Result<CohortTable> {
    Ok(generate_cohort_with_summary(cfg)?.0)
}

pub fn generate_cohort_with_summary(cfg: &GeneratorConfig) -> Result<(CohortTable, GenerationSummary)> {
    cfg.validate()?;
    let include_intraop = cfg.has_intraop_signal();
    let schema = default_schema(include_intraop);

    let generated: Vec<(CaseRecord, Latents)> = (0..cfg.n_cases)
        .into_par_iter()
        .map(|i| generate_case(cfg, i, include_intraop))
        .collect();

    let mut cases: Vec<CaseRecord> = Vec::with_capacity(cfg.n_cases);
    let mut latents: Vec<Latents> = Vec::with_capacity(cfg.n_cases);
    for (case, l) in generated {
        cases.push(case);
        latents.push(l);
    }

    let mut achieved = BTreeMap::new();
    let mut warnings = Vec::new();
    for outcome in Outcome::ALL {
        let target = cfg.prevalence.get(&outcome).copied().unwrap_or(0.1);
        let w_pre = cfg.preop_signal.get(&outcome).copied().unwrap_or(0.0);
        let w_intra = cfg.intraop_signal.get(&outcome).copied().unwrap_or(0.0);
        let ([a, b], [c, d]) = outcome_mix(outcome);
        let scores: Vec<f64> = latents
            .iter()
            .map(|l| {
                w_pre * (a * l.frailty + b * l.acuity) + w_intra * (c * l.instability + d * l.stress)
            })
            .collect();
        let intercept = calibrate_intercept(&scores, target);
        let mut positives = 0usize;
        for (i, case) in cases.iter_mut().enumerate() {
            let p = sigmoid(scores[i] - intercept);
            let mut label_stream = rng::stream(rng::mix_str(cfg.seed, outcome.as_str()), i as u64);
            let label = (label_stream.gen::<f64>() < p) as u8;
            positives += label as usize;
            case.outcomes.insert(outcome, label);
        }
        let rate = positives as f64 / cfg.n_cases as f64;
        achieved.insert(outcome, rate);
        if (rate - target).abs() > 0.02 {
            warnings.push(format!(
                "outcome {outcome}: achieved prevalence {rate:.4} misses target {target:.4}"
            ));
        }
    }

    Ok((
        CohortTable { schema, cases },
        GenerationSummary {
            achieved_prevalence: achieved,
            warnings,
        },
    ))
}
