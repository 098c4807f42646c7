//! From-scratch random forest classifier: axis-aligned CART trees with
//! class-weighted Gini impurity, bootstrap bagging, per-split feature
//! subsampling, and grid-search cross-validation maximizing AUROC.

mod ensemble;
mod grid;
mod tree;

pub use ensemble::{
    fit_forest, load_forest, oob_accuracy, oob_predictions, predict_proba, predict_proba_batch,
    save_forest, Forest, FOREST_FORMAT_VERSION,
};
pub use grid::{
    default_grid, grid_search_cv, grid_search_cv_folds, select_k_best, FoldData, GridCvRow,
    GridSearchOutcome,
};
pub use tree::{fit_tree, predict_tree, FlatNode};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Features considered at each split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxFeatures {
    /// floor(sqrt(n_features))
    Sqrt,
    All,
    Count(usize),
    /// Fraction of n_features, rounded, at least 1.
    Fraction(f64),
}

impl MaxFeatures {
    pub fn resolve(&self, n_features: usize) -> Result<usize> {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Count(c) => {
                if *c == 0 {
                    return Err(Error::Fit("max_features count must be >= 1".into()));
                }
                (*c).min(n_features)
            }
            MaxFeatures::Fraction(f) => {
                if !(*f > 0.0 && *f <= 1.0) {
                    return Err(Error::Fit(format!(
                        "max_features fraction {f} outside (0, 1]"
                    )));
                }
                (f * n_features as f64).round() as usize
            }
        };
        Ok(k.clamp(1, n_features.max(1)))
    }
}

// JSON forms: "sqrt", "all", an integer count, or a fractional number.
impl Serialize for MaxFeatures {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MaxFeatures::Sqrt => serializer.serialize_str("sqrt"),
            MaxFeatures::All => serializer.serialize_str("all"),
            MaxFeatures::Count(c) => serializer.serialize_u64(*c as u64),
            MaxFeatures::Fraction(f) => serializer.serialize_f64(*f),
        }
    }
}

impl<'de> Deserialize<'de> for MaxFeatures {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        match &value {
            serde_json::Value::String(s) => match s.as_str() {
                "sqrt" => Ok(MaxFeatures::Sqrt),
                "all" => Ok(MaxFeatures::All),
                other => Err(D::Error::custom(format!("unknown max_features {other:?}"))),
            },
            serde_json::Value::Number(n) => {
                if let Some(c) = n.as_u64() {
                    return Ok(MaxFeatures::Count(c as usize));
                }
                n.as_f64()
                    .map(MaxFeatures::Fraction)
                    .ok_or_else(|| D::Error::custom("bad max_features number"))
            }
            other => Err(D::Error::custom(format!("bad max_features {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeightMode {
    Balanced,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    #[serde(default = "default_n_trees")]
    pub n_trees: usize,
    #[serde(default = "default_max_features")]
    pub max_features: MaxFeatures,
    #[serde(default = "default_min_samples_leaf")]
    pub min_samples_leaf: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    #[serde(default = "default_class_weight_mode")]
    pub class_weight_mode: ClassWeightMode,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_trees() -> usize {
    100
}

fn default_max_features() -> MaxFeatures {
    MaxFeatures::Sqrt
}

fn default_min_samples_leaf() -> usize {
    5
}

fn default_class_weight_mode() -> ClassWeightMode {
    ClassWeightMode::Balanced
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Fit("n_trees must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Fit("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 5,
            max_depth: None,
            class_weight_mode: ClassWeightMode::Balanced,
            seed: 0,
        }
    }
}

/// Per-class weights: balanced gives w_c = N / (2 N_c), equalizing total
/// class influence; a class absent from the labels gets weight 0 with a
/// warning.
pub fn class_weights(labels: &[u8], mode: ClassWeightMode) -> Result<[f64; 2]> {
    if labels.is_empty() {
        return Err(Error::InsufficientData("empty label vector".into()));
    }
    match mode {
        ClassWeightMode::None => Ok([1.0, 1.0]),
        ClassWeightMode::Balanced => {
            let n = labels.len() as f64;
            let n1 = labels.iter().filter(|&&y| y == 1).count() as f64;
            let n0 = n - n1;
            let weight = |nc: f64| {
                if nc == 0.0 {
                    log::warn!("balanced class weights with an absent class; weight set to 0");
                    0.0
                } else {
                    n / (2.0 * nc)
                }
            };
            Ok([weight(n0), weight(n1)])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_even_split_is_unit() {
        let labels: Vec<u8> = [vec![0u8; 50], vec![1u8; 50]].concat();
        assert_eq!(class_weights(&labels, ClassWeightMode::Balanced).unwrap(), [1.0, 1.0]);
    }

    #[test]
    fn balanced_ninety_ten() {
        let labels: Vec<u8> = [vec![0u8; 90], vec![1u8; 10]].concat();
        let [w0, w1] = class_weights(&labels, ClassWeightMode::Balanced).unwrap();
        assert!((w0 - 100.0 / 180.0).abs() < 1e-12);
        assert_eq!(w1, 5.0);
    }

    #[test]
    fn none_mode_is_identity() {
        let labels = [1u8, 1, 1, 0];
        assert_eq!(class_weights(&labels, ClassWeightMode::None).unwrap(), [1.0, 1.0]);
    }

    #[test]
    fn absent_class_gets_zero_weight() {
        let labels = [1u8, 1, 1];
        let [w0, w1] = class_weights(&labels, ClassWeightMode::Balanced).unwrap();
        assert_eq!(w0, 0.0);
        assert_eq!(w1, 0.5);
    }

    #[test]
    fn max_features_resolution() {
        assert_eq!(MaxFeatures::Sqrt.resolve(49).unwrap(), 7);
        assert_eq!(MaxFeatures::Sqrt.resolve(50).unwrap(), 7);
        assert_eq!(MaxFeatures::All.resolve(12).unwrap(), 12);
        assert_eq!(MaxFeatures::Count(5).resolve(3).unwrap(), 3);
        assert_eq!(MaxFeatures::Fraction(0.25).resolve(53).unwrap(), 13);
        assert_eq!(MaxFeatures::Fraction(1.0).resolve(9).unwrap(), 9);
        assert!(MaxFeatures::Fraction(1.5).resolve(9).is_err());
        assert!(MaxFeatures::Count(0).resolve(9).is_err());
        // tiny fractions still consider one feature
        assert_eq!(MaxFeatures::Fraction(0.001).resolve(10).unwrap(), 1);
    }

    #[test]
    fn max_features_json_round_trip() {
        for mf in [
            MaxFeatures::Sqrt,
            MaxFeatures::All,
            MaxFeatures::Count(7),
            MaxFeatures::Fraction(0.25),
        ] {
            let json = serde_json::to_string(&mf).unwrap();
            let back: MaxFeatures = serde_json::from_str(&json).unwrap();
            assert_eq!(mf, back, "json {json}");
        }
    }
}
