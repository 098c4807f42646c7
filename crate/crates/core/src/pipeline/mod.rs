//! Two-layer training and prediction: per complication, one model on
//! preoperative features only and one on preoperative plus intraoperative
//! features, then a mortality model stacked on the complication
//! probabilities.
//!
//! Leakage rules: transformers are fit per cross-validation training
//! partition; decision thresholds come from pooled out-of-fold predictions;
//! the mortality stacker trains only on out-of-fold complication
//! predictions.

mod persist;

pub use persist::{bundle_fingerprint, load_bundle, save_bundle, write_panels_csv, BUNDLE_FORMAT_VERSION};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{CaseRecord, CohortTable, Outcome, SplitPlan};
use crate::error::{Error, Result};
use crate::eval::{compare_models, youden_threshold, CompareOptions, ComparisonReport};
use crate::forest::{
    fit_forest, grid_search_cv_folds, predict_proba, select_k_best, FoldData, Forest, GridCvRow,
    HyperParams,
};
use crate::rng;
use crate::transform::{
    build_ts_cache, fit_transformer_on, Layer, SpikeParams, TransformerState, TsCache,
    TsFeatureMap,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskClass {
    Low,
    High,
}

/// Probability with its low/high classification (ties classify high).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProbClass {
    pub probability: f64,
    pub risk_class: RiskClass,
}

/// Classify a probability against a Youden cut-off; a probability exactly at
/// the threshold classifies high.
pub fn classify(probability: f64, threshold: f64) -> ProbClass {
    ProbClass {
        probability,
        risk_class: if probability >= threshold {
            RiskClass::High
        } else {
            RiskClass::Low
        },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelEntry {
    pub preop: Option<ProbClass>,
    pub postop: Option<ProbClass>,
}

/// Per-case risk panel: one entry per trained outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskPanel {
    pub case_id: String,
    pub outcomes: BTreeMap<Outcome, PanelEntry>,
}

/// One trained (outcome, layer) model.
#[derive(Debug, Clone)]
pub struct ModelEntry {
    pub transformer: TransformerState,
    pub forest: Forest,
    /// Youden cut-off fit on pooled out-of-fold predictions.
    pub threshold: f64,
    pub best_hp: HyperParams,
    /// Column subset kept by the optional select-k-best stage.
    pub selected_features: Option<Vec<usize>>,
}

impl ModelEntry {
    fn project(&self, x: Vec<f64>) -> Vec<f64> {
        match &self.selected_features {
            None => x,
            Some(keep) => keep.iter().map(|&i| x[i]).collect(),
        }
    }

    pub fn predict(&self, case: &CaseRecord, layer: Layer, ts: &TsFeatureMap) -> Result<f64> {
        let x = self.project(self.transformer.apply_with_ts(case, layer, ts));
        predict_proba(&self.forest, &x)
    }

    /// Whether this model consumes any time-series channel features.
    pub fn uses_channels(&self) -> bool {
        !self.transformer.channels.is_empty()
    }
}

/// The stacked mortality model for one layer; features are the complication
/// probabilities (plus optional external AKI/sepsis probabilities).
#[derive(Debug, Clone)]
pub struct StackerEntry {
    pub forest: Forest,
    pub threshold: f64,
    pub best_hp: HyperParams,
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LayerPair<T> {
    pub preop: Option<T>,
    pub postop: Option<T>,
}

impl<T> Default for LayerPair<T> {
    fn default() -> Self {
        LayerPair {
            preop: None,
            postop: None,
        }
    }
}

impl<T> LayerPair<T> {
    pub fn get(&self, layer: Layer) -> Option<&T> {
        match layer {
            Layer::PreopOnly => self.preop.as_ref(),
            Layer::PreopPlusIntraop => self.postop.as_ref(),
        }
    }

    fn set(&mut self, layer: Layer, value: T) {
        match layer {
            Layer::PreopOnly => self.preop = Some(value),
            Layer::PreopPlusIntraop => self.postop = Some(value),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineBundle {
    pub seed: u64,
    pub complications: BTreeMap<Outcome, LayerPair<ModelEntry>>,
    pub mortality: LayerPair<StackerEntry>,
    pub uses_external: bool,
    /// Sorted ids of the cases the bundle was trained on.
    pub train_case_ids: Vec<String>,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingLogEntry {
    pub outcome: String,
    pub layer: String,
    pub n_train: usize,
    pub threshold: f64,
    pub best_hp: HyperParams,
    pub cv_table: Vec<GridCvRow>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<TrainingLogEntry>,
    pub skipped: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub outcomes: Vec<Outcome>,
    pub layers: Vec<Layer>,
    pub train_mortality: bool,
    pub select_k: Option<usize>,
    /// Consume ext_prob_aki / ext_prob_sepsis columns when every training
    /// case carries them.
    pub allow_external: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            outcomes: Outcome::COMPLICATIONS.to_vec(),
            layers: Layer::BOTH.to_vec(),
            train_mortality: true,
            select_k: None,
            allow_external: true,
        }
    }
}

/// Out-of-fold predictions per training row, produced while training one
/// complication; consumed by the mortality stacker.
#[derive(Debug, Clone)]
pub struct OofPredictions {
    pub by_layer: BTreeMap<Layer, Vec<f64>>,
}

fn training_rows<'a>(cohort: &'a CohortTable, split: &SplitPlan) -> Vec<&'a CaseRecord> {
    cohort
        .cases
        .iter()
        .filter(|c| split.fold_of(&c.case_id).is_some())
        .collect()
}

fn labels_for(rows: &[&CaseRecord], outcome: Outcome) -> Result<Vec<u8>> {
    rows.iter()
        .map(|c| {
            c.label(outcome)
                .ok_or_else(|| Error::Integrity(format!("case {} lacks outcome {outcome}", c.case_id)))
        })
        .collect()
}

fn single_class(labels: &[u8]) -> bool {
    labels.iter().all(|&y| y == 0) || labels.iter().all(|&y| y == 1)
}

fn grid_with_seed(grid: &[HyperParams], seed: u64) -> Vec<HyperParams> {
    grid.iter().map(|hp| HyperParams { seed, ..*hp }).collect()
}

/// Train the paired preoperative / extended models for one complication.
/// Returns the fitted entries plus the out-of-fold predictions that the
/// mortality stacker and the thresholds are derived from.
pub fn train_complication_models(
    cohort: &CohortTable,
    outcome: Outcome,
    split: &SplitPlan,
    grid: &[HyperParams],
    seed: u64,
    options: &TrainOptions,
    ts_cache: &TsCache,
) -> Result<(LayerPair<ModelEntry>, OofPredictions, Vec<TrainingLogEntry>)> {
    let rows = training_rows(cohort, split);
    if rows.is_empty() {
        return Err(Error::Sizing("no training rows in split".into()));
    }
    let labels = labels_for(&rows, outcome)?;
    if single_class(&labels) {
        return Err(Error::UndefinedMetric(format!(
            "outcome {outcome} is single-class in the training partition"
        )));
    }
    let outcome_seed = rng::mix_str(seed, outcome.as_str());

    // per-fold transformers (leakage-safe), shared by both layers
    let row_fold: Vec<usize> = rows
        .iter()
        .map(|c| split.fold_of(&c.case_id).expect("training row has a fold"))
        .collect();
    let fold_states: Vec<TransformerState> = (0..split.n_folds)
        .into_par_iter()
        .map(|f| {
            let train_subset: Vec<&CaseRecord> = rows
                .iter()
                .zip(&row_fold)
                .filter(|(_, &rf)| rf != f)
                .map(|(c, _)| *c)
                .collect();
            fit_transformer_on(&cohort.schema, &train_subset, outcome, outcome_seed, Some(ts_cache))
        })
        .collect::<Result<_>>()?;

    let final_state = fit_transformer_on(&cohort.schema, &rows, outcome, outcome_seed, Some(ts_cache))?;

    let mut pair: LayerPair<ModelEntry> = LayerPair::default();
    let mut oof = OofPredictions {
        by_layer: BTreeMap::new(),
    };
    let mut log_entries = Vec::new();

    for &layer in &options.layers {
        let mut folds: Vec<FoldData> = Vec::with_capacity(split.n_folds);
        for f in 0..split.n_folds {
            let state = &fold_states[f];
            let apply = |c: &&CaseRecord| state.apply_with_ts(c, layer, &ts_cache[&c.case_id]);
            let (mut x_train, mut y_train) = (Vec::new(), Vec::new());
            let (mut x_val, mut y_val, mut val_positions) = (Vec::new(), Vec::new(), Vec::new());
            let transformed: Vec<Vec<f64>> = rows.par_iter().map(|c| apply(&c)).collect();
            for (i, x) in transformed.into_iter().enumerate() {
                if row_fold[i] == f {
                    x_val.push(x);
                    y_val.push(labels[i]);
                    val_positions.push(i);
                } else {
                    x_train.push(x);
                    y_train.push(labels[i]);
                }
            }
            folds.push(FoldData {
                x_train,
                y_train,
                x_val,
                y_val,
                val_positions,
            });
        }
        if let Some(k) = options.select_k {
            for fold in &mut folds {
                let keep = select_k_best(&fold.x_train, &fold.y_train, k)?;
                let project = |m: &mut Vec<Vec<f64>>| {
                    for row in m.iter_mut() {
                        *row = keep.iter().map(|&i| row[i]).collect();
                    }
                };
                project(&mut fold.x_train);
                project(&mut fold.x_val);
            }
        }

        let search = grid_search_cv_folds(&folds, &grid_with_seed(grid, outcome_seed))?;
        let oof_layer: Vec<f64> = search
            .best_oof
            .iter()
            .map(|p| p.expect("every training row is in exactly one fold"))
            .collect();
        let youden = youden_threshold(&oof_layer, &labels)?;

        // final model on the full training partition
        let x_full: Vec<Vec<f64>> = rows
            .par_iter()
            .map(|c| final_state.apply_with_ts(c, layer, &ts_cache[&c.case_id]))
            .collect();
        let (x_full, selected_features) = match options.select_k {
            None => (x_full, None),
            Some(k) => {
                let keep = select_k_best(&x_full, &labels, k)?;
                let projected = x_full
                    .iter()
                    .map(|row| keep.iter().map(|&i| row[i]).collect())
                    .collect();
                (projected, Some(keep))
            }
        };
        let forest = fit_forest(&x_full, &labels, &search.best)?;

        log_entries.push(TrainingLogEntry {
            outcome: outcome.to_string(),
            layer: layer.to_string(),
            n_train: rows.len(),
            threshold: youden.threshold,
            best_hp: search.best,
            cv_table: search.table.clone(),
        });
        pair.set(
            layer,
            ModelEntry {
                transformer: final_state.clone(),
                forest,
                threshold: youden.threshold,
                best_hp: search.best,
                selected_features,
            },
        );
        oof.by_layer.insert(layer, oof_layer);
    }

    Ok((pair, oof, log_entries))
}

/// Stack feature matrix for the mortality model: out-of-fold complication
/// probabilities in `Outcome::COMPLICATIONS` order, plus external columns
/// when enabled.
fn stack_features(
    rows: &[&CaseRecord],
    oof: &BTreeMap<Outcome, OofPredictions>,
    layer: Layer,
    uses_external: bool,
) -> (Vec<Vec<f64>>, Vec<String>) {
    let names: Vec<String> = {
        let mut n: Vec<String> = Outcome::COMPLICATIONS
            .iter()
            .map(|o| format!("p_{o}"))
            .collect();
        if uses_external {
            n.push("ext_aki".into());
            n.push("ext_sepsis".into());
        }
        n
    };
    let x: Vec<Vec<f64>> = (0..rows.len())
        .map(|i| {
            let mut row: Vec<f64> = Outcome::COMPLICATIONS
                .iter()
                .map(|o| oof[o].by_layer[&layer][i])
                .collect();
            if uses_external {
                row.push(rows[i].external_probs.get("aki").copied().unwrap_or(0.5));
                row.push(rows[i].external_probs.get("sepsis").copied().unwrap_or(0.5));
            }
            row
        })
        .collect();
    (x, names)
}

/// Train the stacked in-hospital mortality model per layer from out-of-fold
/// complication predictions.
pub fn train_mortality_stacker(
    cohort: &CohortTable,
    oof: &BTreeMap<Outcome, OofPredictions>,
    split: &SplitPlan,
    grid: &[HyperParams],
    seed: u64,
    options: &TrainOptions,
) -> Result<(LayerPair<StackerEntry>, bool, Vec<TrainingLogEntry>)> {
    let rows = training_rows(cohort, split);
    let labels = labels_for(&rows, Outcome::Mortality)?;
    if single_class(&labels) {
        return Err(Error::UndefinedMetric(
            "mortality is single-class in the training partition".into(),
        ));
    }
    let uses_external = options.allow_external
        && rows.iter().all(|c| {
            c.external_probs.contains_key("aki") && c.external_probs.contains_key("sepsis")
        });
    let row_fold: Vec<usize> = rows
        .iter()
        .map(|c| split.fold_of(&c.case_id).expect("training row has a fold"))
        .collect();
    let mortality_seed = rng::mix_str(seed, Outcome::Mortality.as_str());

    let mut pair: LayerPair<StackerEntry> = LayerPair::default();
    let mut log_entries = Vec::new();
    for &layer in &options.layers {
        if !oof.values().all(|o| o.by_layer.contains_key(&layer)) {
            continue;
        }
        let (x, feature_names) = stack_features(&rows, oof, layer, uses_external);
        let mut folds: Vec<FoldData> = Vec::with_capacity(split.n_folds);
        for f in 0..split.n_folds {
            let mut fold = FoldData {
                x_train: Vec::new(),
                y_train: Vec::new(),
                x_val: Vec::new(),
                y_val: Vec::new(),
                val_positions: Vec::new(),
            };
            for i in 0..rows.len() {
                if row_fold[i] == f {
                    fold.x_val.push(x[i].clone());
                    fold.y_val.push(labels[i]);
                    fold.val_positions.push(i);
                } else {
                    fold.x_train.push(x[i].clone());
                    fold.y_train.push(labels[i]);
                }
            }
            folds.push(fold);
        }
        let search = grid_search_cv_folds(&folds, &grid_with_seed(grid, mortality_seed))?;
        let oof_mort: Vec<f64> = search
            .best_oof
            .iter()
            .map(|p| p.expect("every training row is in exactly one fold"))
            .collect();
        let youden = youden_threshold(&oof_mort, &labels)?;
        let forest = fit_forest(&x, &labels, &search.best)?;
        log_entries.push(TrainingLogEntry {
            outcome: Outcome::Mortality.to_string(),
            layer: layer.to_string(),
            n_train: rows.len(),
            threshold: youden.threshold,
            best_hp: search.best,
            cv_table: search.table.clone(),
        });
        pair.set(
            layer,
            StackerEntry {
                forest,
                threshold: youden.threshold,
                best_hp: search.best,
                feature_names,
            },
        );
    }
    Ok((pair, uses_external, log_entries))
}

/// Train everything the options select; outcomes that are single-class in
/// the training partition are skipped with a log line.
pub fn train_pipeline(
    cohort: &CohortTable,
    split: &SplitPlan,
    grid: &[HyperParams],
    seed: u64,
    options: &TrainOptions,
    config_fingerprint: String,
) -> Result<(PipelineBundle, TrainingLog)> {
    let rows = training_rows(cohort, split);
    if rows.is_empty() {
        return Err(Error::Sizing("no training rows in split".into()));
    }
    let ts_cache = build_ts_cache(&cohort.schema, &SpikeParams::default(), &rows);

    let mut log = TrainingLog::default();
    let mut complications = BTreeMap::new();
    let mut oof_map = BTreeMap::new();
    for &outcome in &options.outcomes {
        match train_complication_models(cohort, outcome, split, grid, seed, options, &ts_cache) {
            Ok((pair, oof, entries)) => {
                log.entries.extend(entries);
                complications.insert(outcome, pair);
                oof_map.insert(outcome, oof);
            }
            Err(Error::UndefinedMetric(msg)) => {
                log::warn!("skipping outcome {outcome}: {msg}");
                log.skipped.push((outcome.to_string(), msg));
            }
            Err(e) => return Err(e),
        }
    }

    let mut mortality = LayerPair::default();
    let mut uses_external = false;
    if options.train_mortality {
        let all_complications = Outcome::COMPLICATIONS.iter().all(|o| oof_map.contains_key(o));
        if all_complications {
            match train_mortality_stacker(cohort, &oof_map, split, grid, seed, options) {
                Ok((pair, ext, entries)) => {
                    log.entries.extend(entries);
                    mortality = pair;
                    uses_external = ext;
                }
                Err(Error::UndefinedMetric(msg)) => {
                    log::warn!("skipping mortality: {msg}");
                    log.skipped.push((Outcome::Mortality.to_string(), msg));
                }
                Err(e) => return Err(e),
            }
        } else {
            let msg = "mortality stacking needs all three complication models".to_string();
            log::warn!("{msg}");
            log.skipped.push((Outcome::Mortality.to_string(), msg));
        }
    }

    if complications.is_empty() {
        return Err(Error::UndefinedMetric(
            "every selected outcome was skipped".into(),
        ));
    }

    let mut train_case_ids: Vec<String> = rows.iter().map(|c| c.case_id.clone()).collect();
    train_case_ids.sort_unstable();
    Ok((
        PipelineBundle {
            seed,
            complications,
            mortality,
            uses_external,
            train_case_ids,
            config_fingerprint,
        },
        log,
    ))
}

impl PipelineBundle {
    /// Any transformer in the bundle (they share cleaning parameters).
    fn any_transformer(&self) -> Option<&TransformerState> {
        self.complications.values().find_map(|p| {
            p.preop
                .as_ref()
                .map(|e| &e.transformer)
                .or_else(|| p.postop.as_ref().map(|e| &e.transformer))
        })
    }

    /// Trained outcomes in canonical order (mortality last when present).
    pub fn trained_outcomes(&self) -> Vec<Outcome> {
        let mut out: Vec<Outcome> = Outcome::COMPLICATIONS
            .iter()
            .copied()
            .filter(|o| self.complications.contains_key(o))
            .collect();
        if self.mortality.preop.is_some() || self.mortality.postop.is_some() {
            out.push(Outcome::Mortality);
        }
        out
    }

    /// Per-case risk panel. Extended-layer entries appear only when the case
    /// has intraoperative channels or the extended model consumes no channel
    /// features (a cohort without any intraoperative data collapses the
    /// layers).
    pub fn predict_panel(&self, case: &CaseRecord) -> Result<RiskPanel> {
        let ts = match self.any_transformer() {
            Some(state) => state.case_ts_features(case),
            None => TsFeatureMap::new(),
        };
        let mut outcomes: BTreeMap<Outcome, PanelEntry> = BTreeMap::new();
        let mut layer_probs: BTreeMap<(Outcome, Layer), f64> = BTreeMap::new();
        for (&outcome, pair) in &self.complications {
            let preop = match &pair.preop {
                Some(entry) => {
                    let p = entry.predict(case, Layer::PreopOnly, &ts)?;
                    layer_probs.insert((outcome, Layer::PreopOnly), p);
                    Some(classify(p, entry.threshold))
                }
                None => None,
            };
            let postop = match &pair.postop {
                Some(entry) if case.has_intraop_channels() || !entry.uses_channels() => {
                    let p = entry.predict(case, Layer::PreopPlusIntraop, &ts)?;
                    layer_probs.insert((outcome, Layer::PreopPlusIntraop), p);
                    Some(classify(p, entry.threshold))
                }
                _ => None,
            };
            outcomes.insert(outcome, PanelEntry { preop, postop });
        }

        let mut mortality_entry = PanelEntry {
            preop: None,
            postop: None,
        };
        for layer in Layer::BOTH {
            let Some(stacker) = self.mortality.get(layer) else { continue };
            let probs: Option<Vec<f64>> = Outcome::COMPLICATIONS
                .iter()
                .map(|o| layer_probs.get(&(*o, layer)).copied())
                .collect();
            let Some(mut x) = probs else { continue };
            if self.uses_external {
                x.push(case.external_probs.get("aki").copied().unwrap_or(0.5));
                x.push(case.external_probs.get("sepsis").copied().unwrap_or(0.5));
            }
            let p = predict_proba(&stacker.forest, &x)?;
            let entry = classify(p, stacker.threshold);
            match layer {
                Layer::PreopOnly => mortality_entry.preop = Some(entry),
                Layer::PreopPlusIntraop => mortality_entry.postop = Some(entry),
            }
        }
        if mortality_entry.preop.is_some() || mortality_entry.postop.is_some() {
            outcomes.insert(Outcome::Mortality, mortality_entry);
        }

        Ok(RiskPanel {
            case_id: case.case_id.clone(),
            outcomes,
        })
    }

    pub fn predict_panels(&self, cases: &[&CaseRecord]) -> Result<Vec<RiskPanel>> {
        cases.par_iter().map(|c| self.predict_panel(c)).collect()
    }

    /// Decision threshold for one (outcome, layer), when trained.
    pub fn threshold(&self, outcome: Outcome, layer: Layer) -> Option<f64> {
        if outcome == Outcome::Mortality {
            self.mortality.get(layer).map(|s| s.threshold)
        } else {
            self.complications
                .get(&outcome)
                .and_then(|p| p.get(layer))
                .map(|e| e.threshold)
        }
    }
}

/// Paired preop-vs-postop comparison of bundle panels on a labeled cohort.
pub fn compare_layers(
    bundle: &PipelineBundle,
    cohort: &CohortTable,
    n_boot: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    let cases: Vec<&CaseRecord> = cohort.cases.iter().collect();
    let panels = bundle.predict_panels(&cases)?;
    let mut outcomes = Vec::new();
    for outcome in bundle.trained_outcomes() {
        let mut preop_scores = Vec::new();
        let mut postop_scores = Vec::new();
        let mut labels = Vec::new();
        for (case, panel) in cases.iter().zip(&panels) {
            let Some(entry) = panel.outcomes.get(&outcome) else { continue };
            let (Some(pre), Some(post)) = (&entry.preop, &entry.postop) else { continue };
            let Some(label) = case.label(outcome) else { continue };
            preop_scores.push(pre.probability);
            postop_scores.push(post.probability);
            labels.push(label);
        }
        if labels.is_empty() {
            continue;
        }
        let options = CompareOptions {
            threshold_old: bundle.threshold(outcome, Layer::PreopOnly),
            threshold_new: bundle.threshold(outcome, Layer::PreopPlusIntraop),
            n_boot,
            seed: rng::mix_str(seed, outcome.as_str()),
        };
        match compare_models(&preop_scores, &postop_scores, &labels, outcome.as_str(), &options) {
            Ok(cmp) => outcomes.push(cmp),
            Err(Error::UndefinedMetric(msg)) => {
                log::warn!("comparison for {outcome} undefined: {msg}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ComparisonReport {
        n_boot,
        seed,
        paired_test: "Wilcoxon signed-rank on shared-resample bootstrap replicates".into(),
        outcomes,
    })
}
