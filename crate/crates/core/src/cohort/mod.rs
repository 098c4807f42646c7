//! Cohort data model: feature schemas, case records, time-series channels,
//! outcomes, and train/validation split plans.

mod io;
mod split;

pub use io::{load_cohort, load_schema, save_cohort, save_schema, MISSING_TOKEN};
pub use split::{make_split, HoldoutSpec, SplitPlan};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four modeled outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    IcuGt48h,
    MvGt48h,
    NeuroDelirium,
    Mortality,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome::IcuGt48h,
        Outcome::MvGt48h,
        Outcome::NeuroDelirium,
        Outcome::Mortality,
    ];

    /// The three complications (everything except mortality).
    pub const COMPLICATIONS: [Outcome; 3] = [
        Outcome::IcuGt48h,
        Outcome::MvGt48h,
        Outcome::NeuroDelirium,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::IcuGt48h => "icu_gt_48h",
            Outcome::MvGt48h => "mv_gt_48h",
            Outcome::NeuroDelirium => "neuro_delirium",
            Outcome::Mortality => "mortality",
        }
    }

    pub fn parse(s: &str) -> Option<Outcome> {
        Outcome::ALL.iter().copied().find(|o| o.as_str() == s)
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which phase of care a feature belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Preoperative,
    Intraoperative,
}

/// How a feature's raw values are typed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Binary,
    Nominal,
    Timeseries,
    ProcedureCode,
}

/// One feature declaration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
    pub phase: Phase,
    /// Allowed [lo, hi] in native units; only for continuous / timeseries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_range: Option<(f64, f64)>,
}

/// Ordered feature declarations plus per-channel value bands used for
/// fraction-of-time statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureDef>,
    /// channel name -> list of [lo, hi] value bands
    #[serde(default)]
    pub bands: BTreeMap<String, Vec<(f64, f64)>>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureDef>, bands: BTreeMap<String, Vec<(f64, f64)>>) -> Result<Self> {
        let schema = FeatureSchema { features, bands };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for def in &self.features {
            if seen.insert(def.name.clone(), ()).is_some() {
                return Err(Error::Schema(format!("duplicate feature name {}", def.name)));
            }
            match def.kind {
                FeatureKind::Continuous | FeatureKind::Timeseries => {
                    if let Some((lo, hi)) = def.allowed_range {
                        if !(lo < hi) {
                            return Err(Error::Schema(format!(
                                "feature {}: allowed_range lo {lo} must be < hi {hi}",
                                def.name
                            )));
                        }
                    }
                }
                _ => {
                    if def.allowed_range.is_some() {
                        return Err(Error::Schema(format!(
                            "feature {}: allowed_range only valid for continuous/timeseries",
                            def.name
                        )));
                    }
                }
            }
        }
        for channel in self.bands.keys() {
            let known = self
                .features
                .iter()
                .any(|d| d.kind == FeatureKind::Timeseries && &d.name == channel);
            if !known {
                return Err(Error::Schema(format!(
                    "bands declared for unknown timeseries channel {channel}"
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&FeatureDef> {
        self.features.iter().find(|d| d.name == name)
    }

    /// Tabular (non-timeseries) features, in schema order.
    pub fn tabular_features(&self) -> impl Iterator<Item = &FeatureDef> {
        self.features
            .iter()
            .filter(|d| d.kind != FeatureKind::Timeseries)
    }

    /// Time-series channel declarations, in schema order.
    pub fn channel_features(&self) -> impl Iterator<Item = &FeatureDef> {
        self.features
            .iter()
            .filter(|d| d.kind == FeatureKind::Timeseries)
    }

    pub fn bands_for(&self, channel: &str) -> &[(f64, f64)] {
        self.bands.get(channel).map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// A raw tabular cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Number(f64),
    Token(String),
    Missing,
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_token(&self) -> Option<&str> {
        match self {
            Value::Token(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }
}

/// One sample of an intraoperative monitor channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Seconds from surgery start.
    pub time_s: f64,
    pub value: f64,
}

/// An intraoperative time series (heart rate, SBP, SpO2, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesChannel {
    pub name: String,
    pub samples: Vec<Sample>,
}

impl TimeSeriesChannel {
    pub fn new(name: impl Into<String>) -> Self {
        TimeSeriesChannel {
            name: name.into(),
            samples: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One surgical case: tabular values, channels, outcome labels, and optional
/// externally supplied model probabilities (AKI, sepsis).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub patient_id: String,
    /// Admission the surgery belongs to; cases sharing (patient, admission)
    /// collapse to the earliest surgery at load time.
    pub admission_id: String,
    /// Surgery start, in days on an arbitrary but monotone axis. Drives the
    /// date-cutoff holdout mode.
    pub surgery_start: f64,
    pub tabular: HashMap<String, Value>,
    pub channels: Vec<TimeSeriesChannel>,
    pub outcomes: BTreeMap<Outcome, u8>,
    pub external_probs: BTreeMap<String, f64>,
}

impl CaseRecord {
    pub fn channel(&self, name: &str) -> Option<&TimeSeriesChannel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn has_intraop_channels(&self) -> bool {
        self.channels.iter().any(|c| !c.samples.is_empty())
    }

    pub fn label(&self, outcome: Outcome) -> Option<u8> {
        self.outcomes.get(&outcome).copied()
    }
}

/// Immutable-after-load cohort: schema plus validated case rows.
#[derive(Debug, Clone)]
pub struct CohortTable {
    pub schema: FeatureSchema,
    pub cases: Vec<CaseRecord>,
}

impl CohortTable {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn case(&self, case_id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    /// Labels for one outcome over all cases, erroring if any case lacks it.
    pub fn labels(&self, outcome: Outcome) -> Result<Vec<u8>> {
        self.cases
            .iter()
            .map(|c| {
                c.label(outcome).ok_or_else(|| {
                    Error::Integrity(format!("case {} lacks outcome {outcome}", c.case_id))
                })
            })
            .collect()
    }

    pub fn prevalence(&self, outcome: Outcome) -> Result<f64> {
        let labels = self.labels(outcome)?;
        if labels.is_empty() {
            return Err(Error::Sizing("empty cohort".into()));
        }
        Ok(labels.iter().map(|&y| y as f64).sum::<f64>() / labels.len() as f64)
    }
}
