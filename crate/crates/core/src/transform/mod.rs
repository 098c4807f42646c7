//! The data transformer: cleaning, imputation, encoding, procedure grouping,
//! and time-series featurization with strict fit-on-train / apply-on-test
//! separation.
//!
//! Fitting consumes training rows and outcome labels only; applying a fitted
//! state never reads the outcome of the row being transformed. Stochastic
//! outlier imputation draws its stream from (seed, case_id, feature name),
//! so results are order-independent and reproducible.

mod encoding;
mod procedures;
mod timeseries;

pub use encoding::{log_ratio_encoding, NominalEncoder, SMOOTHING_K};
pub use procedures::{encode_procedures, ProcedureTree, DEFAULT_DEPTH, DEFAULT_MIN_SUPPORT};
pub use timeseries::{
    clean_timeseries, extract_ts_features, ts_feature_names, SpikeParams, TsFeatures,
    LONG_TERM_WINDOW_S,
};

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{CaseRecord, CohortTable, FeatureKind, FeatureSchema, Outcome, Phase, Value};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats;

pub const TRANSFORMER_FORMAT_VERSION: u32 = 1;

/// Features whose missing values impute to zero instead of the train median.
pub const ZERO_IMPUTED_FEATURES: [&str; 2] = ["estimated_blood_loss", "urine_output"];

/// Which feature set a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    PreopOnly,
    PreopPlusIntraop,
}

impl Layer {
    pub const BOTH: [Layer; 2] = [Layer::PreopOnly, Layer::PreopPlusIntraop];

    pub fn as_str(&self) -> &'static str {
        match self {
            Layer::PreopOnly => "preop_only",
            Layer::PreopPlusIntraop => "preop_plus_intraop",
        }
    }

    pub fn parse(s: &str) -> Option<Layer> {
        Layer::BOTH.iter().copied().find(|l| l.as_str() == s)
    }
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Train-set statistics for one continuous feature. Outliers are detected at
/// the 1st/99th percentiles and imputed from the [95th, 99.5th] (above) or
/// [0.5th, 5th] (below) percentile bands.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContinuousStats {
    pub median: f64,
    pub p005: f64,
    pub p05: f64,
    pub p95: f64,
    pub p995: f64,
    pub p01: f64,
    pub p99: f64,
}

impl ContinuousStats {
    fn from_values(values: &[f64]) -> ContinuousStats {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pct = |q| stats::percentile_sorted(&sorted, q);
        let out = ContinuousStats {
            median: pct(0.5),
            p005: pct(0.005),
            p05: pct(0.05),
            p95: pct(0.95),
            p995: pct(0.995),
            p01: pct(0.01),
            p99: pct(0.99),
        };
        debug_assert!(
            out.p005 <= out.p05 && out.p05 <= out.median && out.median <= out.p95 && out.p95 <= out.p995
        );
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelParams {
    pub allowed_range: Option<(f64, f64)>,
    pub bands: Vec<(f64, f64)>,
}

/// One slot of the transformed output vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum OutputFeature {
    Continuous { name: String, zero_imputed: bool },
    Binary { name: String },
    Nominal { name: String },
    Procedure { name: String },
    TsFeature { name: String },
}

impl OutputFeature {
    pub fn name(&self) -> &str {
        match self {
            OutputFeature::Continuous { name, .. }
            | OutputFeature::Binary { name }
            | OutputFeature::Nominal { name }
            | OutputFeature::Procedure { name }
            | OutputFeature::TsFeature { name } => name,
        }
    }
}

/// Dense transformed vector aligned to the state's output schema.
pub type FeatureVector = Vec<f64>;

/// Per-case time-series features keyed by output feature name.
pub type TsFeatureMap = BTreeMap<String, f64>;

/// Cleaned + featurized channels for many cases, keyed by case id. Computing
/// this once per cohort avoids re-cleaning channels for every (outcome, fold)
/// transformer fit.
pub type TsCache = BTreeMap<String, TsFeatureMap>;

/// Fitted preprocessing state for one outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformerState {
    pub version: u32,
    pub outcome: Outcome,
    pub seed: u64,
    pub spike: SpikeParams,
    pub continuous: BTreeMap<String, ContinuousStats>,
    pub binary_medians: BTreeMap<String, f64>,
    pub nominal: BTreeMap<String, NominalEncoder>,
    pub procedures: BTreeMap<String, ProcedureTree>,
    pub channels: BTreeMap<String, ChannelParams>,
    /// Train medians of the time-series features, for cases whose channel is
    /// absent or empties out during cleaning.
    pub ts_medians: BTreeMap<String, f64>,
    /// Full output schema; the first `preop_len` slots form the
    /// preoperative-only layer.
    pub output_features: Vec<OutputFeature>,
    pub preop_len: usize,
    /// Fingerprint of the training rows, outcome, and seed.
    pub fitted_on: String,
}

/// Clean every schema channel of a case and flatten to named features.
/// Channels that are absent or empty after cleaning contribute nothing.
pub fn compute_case_ts_features(
    channels: &BTreeMap<String, ChannelParams>,
    spike: &SpikeParams,
    case: &CaseRecord,
) -> TsFeatureMap {
    let mut out = TsFeatureMap::new();
    for (name, params) in channels {
        let Some(raw) = case.channel(name) else {
            continue;
        };
        let cleaned = clean_timeseries(raw, params.allowed_range, spike);
        if let Some(features) = extract_ts_features(&cleaned, &params.bands) {
            out.extend(features.named(name));
        }
    }
    out
}

/// Channel declarations from a schema.
pub fn channel_params(schema: &FeatureSchema) -> BTreeMap<String, ChannelParams> {
    schema
        .channel_features()
        .map(|def| {
            (
                def.name.clone(),
                ChannelParams {
                    allowed_range: def.allowed_range,
                    bands: schema.bands_for(&def.name).to_vec(),
                },
            )
        })
        .collect()
}

/// Featurize the channels of many cases in parallel.
pub fn build_ts_cache(schema: &FeatureSchema, spike: &SpikeParams, cases: &[&CaseRecord]) -> TsCache {
    let channels = channel_params(schema);
    cases
        .par_iter()
        .map(|case| {
            (
                case.case_id.clone(),
                compute_case_ts_features(&channels, spike, case),
            )
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Fit preprocessing parameters on training rows only.
pub fn fit_transformer(train: &CohortTable, outcome: Outcome, seed: u64) -> Result<TransformerState> {
    let cases: Vec<&CaseRecord> = train.cases.iter().collect();
    fit_transformer_on(&train.schema, &cases, outcome, seed, None)
}

/// Fit on an explicit row subset, optionally reusing precomputed time-series
/// features (entries are looked up by case id; missing entries are computed
/// on the fly).
pub fn fit_transformer_on(
    schema: &FeatureSchema,
    train: &[&CaseRecord],
    outcome: Outcome,
    seed: u64,
    ts_cache: Option<&TsCache>,
) -> Result<TransformerState> {
    schema.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let labels: Vec<u8> = train
        .iter()
        .map(|c| {
            c.label(outcome)
                .ok_or_else(|| Error::Integrity(format!("case {} lacks outcome {outcome}", c.case_id)))
        })
        .collect::<Result<_>>()?;

    let spike = SpikeParams::default();
    let channels = channel_params(schema);

    let mut continuous = BTreeMap::new();
    let mut binary_medians = BTreeMap::new();
    let mut nominal = BTreeMap::new();
    let mut procedures = BTreeMap::new();
    for def in schema.tabular_features() {
        match def.kind {
            FeatureKind::Continuous => {
                let values: Vec<f64> = train
                    .iter()
                    .filter_map(|c| c.tabular.get(&def.name).and_then(Value::as_number))
                    .collect();
                let stats = if values.is_empty() {
                    log::warn!("continuous feature {} entirely missing; imputing 0", def.name);
                    ContinuousStats::from_values(&[0.0])
                } else {
                    ContinuousStats::from_values(&values)
                };
                continuous.insert(def.name.clone(), stats);
            }
            FeatureKind::Binary => {
                let values: Vec<f64> = train
                    .iter()
                    .filter_map(|c| c.tabular.get(&def.name).and_then(Value::as_number))
                    .collect();
                let median = if values.is_empty() { 0.0 } else { stats::median(&values) };
                binary_medians.insert(def.name.clone(), median);
            }
            FeatureKind::Nominal => {
                let values: Vec<Option<&str>> = train
                    .iter()
                    .map(|c| c.tabular.get(&def.name).and_then(Value::as_token))
                    .collect();
                nominal.insert(def.name.clone(), NominalEncoder::fit(&values, &labels));
            }
            FeatureKind::ProcedureCode => {
                let pairs: Vec<(String, u8)> = train
                    .iter()
                    .zip(&labels)
                    .map(|(c, &y)| {
                        let code = c
                            .tabular
                            .get(&def.name)
                            .and_then(Value::as_token)
                            .unwrap_or("")
                            .to_string();
                        (code, y)
                    })
                    .collect();
                procedures.insert(
                    def.name.clone(),
                    encode_procedures(&pairs, DEFAULT_DEPTH, DEFAULT_MIN_SUPPORT),
                );
            }
            FeatureKind::Timeseries => unreachable!("filtered out"),
        }
    }

    // medians of the extracted time-series features across training cases
    let mut ts_values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for def in schema.channel_features() {
        for name in ts_feature_names(&def.name, schema.bands_for(&def.name).len()) {
            ts_values.insert(name, Vec::new());
        }
    }
    let computed: Vec<TsFeatureMap>;
    let feature_maps: Vec<&TsFeatureMap> = match ts_cache {
        Some(cache) => train
            .iter()
            .map(|c| {
                cache.get(&c.case_id).unwrap_or_else(|| {
                    panic!("ts cache missing case {}", c.case_id)
                })
            })
            .collect(),
        None => {
            computed = train
                .par_iter()
                .map(|c| compute_case_ts_features(&channels, &spike, c))
                .collect();
            computed.iter().collect()
        }
    };
    for map in feature_maps {
        for (name, value) in map {
            if let Some(list) = ts_values.get_mut(name) {
                list.push(*value);
            }
        }
    }
    let ts_medians = ts_values
        .into_iter()
        .map(|(name, values)| {
            let median = if values.is_empty() {
                log::warn!("time-series feature {name} undefined for every training case; imputing 0");
                0.0
            } else {
                stats::median(&values)
            };
            (name, median)
        })
        .collect();

    // output schema: preoperative tabular, then intraoperative tabular, then
    // channel features
    let mut output_features = Vec::new();
    for def in schema.tabular_features().filter(|d| d.phase == Phase::Preoperative) {
        output_features.push(output_slot(def));
    }
    let preop_len = output_features.len();
    for def in schema.tabular_features().filter(|d| d.phase == Phase::Intraoperative) {
        output_features.push(output_slot(def));
    }
    for def in schema.channel_features() {
        for name in ts_feature_names(&def.name, schema.bands_for(&def.name).len()) {
            output_features.push(OutputFeature::TsFeature { name });
        }
    }

    let mut ids: Vec<&str> = train.iter().map(|c| c.case_id.as_str()).collect();
    ids.sort_unstable();
    let fitted_on = rng::fingerprint(
        format!("{}|{outcome}|{seed}", ids.join(",")).as_bytes(),
    );

    Ok(TransformerState {
        version: TRANSFORMER_FORMAT_VERSION,
        outcome,
        seed,
        spike,
        continuous,
        binary_medians,
        nominal,
        procedures,
        channels,
        ts_medians,
        output_features,
        preop_len,
        fitted_on,
    })
}

fn output_slot(def: &crate::cohort::FeatureDef) -> OutputFeature {
    match def.kind {
        FeatureKind::Continuous => OutputFeature::Continuous {
            name: def.name.clone(),
            zero_imputed: ZERO_IMPUTED_FEATURES.contains(&def.name.as_str()),
        },
        FeatureKind::Binary => OutputFeature::Binary { name: def.name.clone() },
        FeatureKind::Nominal => OutputFeature::Nominal { name: def.name.clone() },
        FeatureKind::ProcedureCode => OutputFeature::Procedure { name: def.name.clone() },
        FeatureKind::Timeseries => unreachable!(),
    }
}

impl TransformerState {
    pub fn output_slots(&self, layer: Layer) -> &[OutputFeature] {
        match layer {
            Layer::PreopOnly => &self.output_features[..self.preop_len],
            Layer::PreopPlusIntraop => &self.output_features,
        }
    }

    pub fn output_names(&self, layer: Layer) -> Vec<String> {
        self.output_slots(layer).iter().map(|f| f.name().to_string()).collect()
    }

    pub fn output_len(&self, layer: Layer) -> usize {
        self.output_slots(layer).len()
    }

    /// Featurize this case's channels with the fitted cleaning parameters.
    pub fn case_ts_features(&self, case: &CaseRecord) -> TsFeatureMap {
        compute_case_ts_features(&self.channels, &self.spike, case)
    }

    /// Transform one case into the dense vector for `layer`. Never consults
    /// the case's outcome labels; unseen categories fall back, missing values
    /// impute, out-of-band continuous values draw from the percentile bands.
    pub fn apply(&self, case: &CaseRecord, layer: Layer) -> FeatureVector {
        let ts = self.case_ts_features(case);
        self.apply_with_ts(case, layer, &ts)
    }

    /// Hot path used when the caller already featurized the channels.
    pub fn apply_with_ts(&self, case: &CaseRecord, layer: Layer, ts: &TsFeatureMap) -> FeatureVector {
        self.output_slots(layer)
            .iter()
            .map(|slot| self.transform_slot(slot, case, ts))
            .collect()
    }

    fn transform_slot(&self, slot: &OutputFeature, case: &CaseRecord, ts: &TsFeatureMap) -> f64 {
        match slot {
            OutputFeature::Continuous { name, zero_imputed } => {
                let stats = &self.continuous[name];
                match case.tabular.get(name).and_then(Value::as_number) {
                    None => {
                        if *zero_imputed {
                            0.0
                        } else {
                            stats.median
                        }
                    }
                    Some(x) if x > stats.p99 => {
                        self.outlier_draw(&case.case_id, name, stats.p95, stats.p995)
                    }
                    Some(x) if x < stats.p01 => {
                        self.outlier_draw(&case.case_id, name, stats.p005, stats.p05)
                    }
                    Some(x) => x,
                }
            }
            OutputFeature::Binary { name } => case
                .tabular
                .get(name)
                .and_then(Value::as_number)
                .unwrap_or(self.binary_medians[name]),
            OutputFeature::Nominal { name } => {
                let value = case.tabular.get(name).and_then(Value::as_token);
                self.nominal[name].encode(value)
            }
            OutputFeature::Procedure { name } => {
                let code = case.tabular.get(name).and_then(Value::as_token).unwrap_or("");
                self.procedures[name].encode(code)
            }
            OutputFeature::TsFeature { name } => {
                ts.get(name).copied().unwrap_or_else(|| self.ts_medians[name])
            }
        }
    }

    /// Uniform draw over [lo, hi), keyed to (seed, case id, feature name) so
    /// parallel workers agree with the serial order.
    fn outlier_draw(&self, case_id: &str, feature: &str, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        let key = rng::mix(rng::mix_str(self.seed, case_id), rng::fnv1a(feature.as_bytes()));
        let mut stream = rng::stream(key, 0);
        stream.gen_range(lo..hi)
    }
}

pub fn save_transformer(state: &TransformerState, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(state)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_transformer(path: &Path) -> Result<TransformerState> {
    let text = std::fs::read_to_string(path)?;
    let state: TransformerState = serde_json::from_str(&text)?;
    if state.version != TRANSFORMER_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "transformer format version {} unsupported (expected {TRANSFORMER_FORMAT_VERSION})",
            state.version
        )));
    }
    Ok(state)
}
