//! Bundle persistence: a directory holding one transformer JSON and one
//! forest JSON per (outcome, layer), plus a manifest with thresholds, seeds,
//! and the config fingerprint. Serialization is canonical (sorted maps, no
//! timestamps), so identical training runs produce byte-identical bundles.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerPair, ModelEntry, PipelineBundle, RiskPanel, StackerEntry};
use crate::cohort::Outcome;
use crate::error::{Error, Result};
use crate::forest::{load_forest, save_forest, HyperParams};
use crate::rng;
use crate::transform::{load_transformer, save_transformer, Layer};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelRef {
    transformer_file: String,
    forest_file: String,
    threshold: f64,
    best_hp: HyperParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    selected_features: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StackerRef {
    forest_file: String,
    threshold: f64,
    best_hp: HyperParams,
    feature_names: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: u64,
    config_fingerprint: String,
    uses_external: bool,
    complications: BTreeMap<String, BTreeMap<String, ModelRef>>,
    mortality: BTreeMap<String, StackerRef>,
    train_case_ids: Vec<String>,
}

pub fn save_bundle(bundle: &PipelineBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Manifest {
        version: BUNDLE_FORMAT_VERSION,
        seed: bundle.seed,
        config_fingerprint: bundle.config_fingerprint.clone(),
        uses_external: bundle.uses_external,
        complications: BTreeMap::new(),
        mortality: BTreeMap::new(),
        train_case_ids: bundle.train_case_ids.clone(),
    };
    for (outcome, pair) in &bundle.complications {
        let mut layers = BTreeMap::new();
        for layer in Layer::BOTH {
            let Some(entry) = pair.get(layer) else { continue };
            let transformer_file = format!("transformer_{outcome}_{layer}.json");
            let forest_file = format!("forest_{outcome}_{layer}.json");
            save_transformer(&entry.transformer, &dir.join(&transformer_file))?;
            save_forest(&entry.forest, &dir.join(&forest_file))?;
            layers.insert(
                layer.to_string(),
                ModelRef {
                    transformer_file,
                    forest_file,
                    threshold: entry.threshold,
                    best_hp: entry.best_hp,
                    selected_features: entry.selected_features.clone(),
                },
            );
        }
        manifest.complications.insert(outcome.to_string(), layers);
    }
    for layer in Layer::BOTH {
        let Some(stacker) = bundle.mortality.get(layer) else { continue };
        let forest_file = format!("forest_mortality_{layer}.json");
        save_forest(&stacker.forest, &dir.join(&forest_file))?;
        manifest.mortality.insert(
            layer.to_string(),
            StackerRef {
                forest_file,
                threshold: stacker.threshold,
                best_hp: stacker.best_hp,
                feature_names: stacker.feature_names.clone(),
            },
        );
    }
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<PipelineBundle> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != BUNDLE_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "bundle format version {} unsupported (expected {BUNDLE_FORMAT_VERSION})",
            manifest.version
        )));
    }
    let mut complications = BTreeMap::new();
    for (outcome_name, layers) in &manifest.complications {
        let outcome = Outcome::parse(outcome_name)
            .ok_or_else(|| Error::Schema(format!("unknown outcome {outcome_name} in manifest")))?;
        let mut pair: LayerPair<ModelEntry> = LayerPair::default();
        for (layer_name, model_ref) in layers {
            let layer = Layer::parse(layer_name)
                .ok_or_else(|| Error::Schema(format!("unknown layer {layer_name} in manifest")))?;
            let entry = ModelEntry {
                transformer: load_transformer(&dir.join(&model_ref.transformer_file))?,
                forest: load_forest(&dir.join(&model_ref.forest_file))?,
                threshold: model_ref.threshold,
                best_hp: model_ref.best_hp,
                selected_features: model_ref.selected_features.clone(),
            };
            match layer {
                Layer::PreopOnly => pair.preop = Some(entry),
                Layer::PreopPlusIntraop => pair.postop = Some(entry),
            }
        }
        complications.insert(outcome, pair);
    }
    let mut mortality: LayerPair<StackerEntry> = LayerPair::default();
    for (layer_name, stacker_ref) in &manifest.mortality {
        let layer = Layer::parse(layer_name)
            .ok_or_else(|| Error::Schema(format!("unknown layer {layer_name} in manifest")))?;
        let entry = StackerEntry {
            forest: load_forest(&dir.join(&stacker_ref.forest_file))?,
            threshold: stacker_ref.threshold,
            best_hp: stacker_ref.best_hp,
            feature_names: stacker_ref.feature_names.clone(),
        };
        match layer {
            Layer::PreopOnly => mortality.preop = Some(entry),
            Layer::PreopPlusIntraop => mortality.postop = Some(entry),
        }
    }
    Ok(PipelineBundle {
        seed: manifest.seed,
        complications,
        mortality,
        uses_external: manifest.uses_external,
        train_case_ids: manifest.train_case_ids,
        config_fingerprint: manifest.config_fingerprint,
    })
}

/// Fingerprint of the bundle's manifest bytes.
pub fn bundle_fingerprint(dir: &Path) -> Result<String> {
    let bytes = std::fs::read(dir.join("manifest.json"))?;
    Ok(rng::fingerprint(&bytes))
}

/// Panel CSV: `case_id,outcome,layer,probability,risk_class`, one row per
/// (case, outcome, trained layer).
pub fn write_panels_csv(panels: &[RiskPanel], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["case_id", "outcome", "layer", "probability", "risk_class"])?;
    for panel in panels {
        for (outcome, entry) in &panel.outcomes {
            for (layer, prob) in [
                (Layer::PreopOnly, &entry.preop),
                (Layer::PreopPlusIntraop, &entry.postop),
            ] {
                if let Some(p) = prob {
                    writer.write_record([
                        panel.case_id.as_str(),
                        outcome.as_str(),
                        layer.as_str(),
                        &format!("{}", p.probability),
                        match p.risk_class {
                            super::RiskClass::Low => "low",
                            super::RiskClass::High => "high",
                        },
                    ])?;
                }
            }
        }
    }
    writer.flush()?;
    Ok(())
}
