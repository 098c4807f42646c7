//! Grid-search with k-fold cross-validation maximizing mean AUROC, plus the
//! optional univariate select-k-best filter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::{fit_forest, predict_proba};
use super::{ClassWeightMode, HyperParams, MaxFeatures};
use crate::error::{Error, Result};
use crate::eval::auroc;
use crate::rng;

/// One cross-validation rotation: train rows vs the held fold, with the held
/// rows' positions in the full row set (for assembling out-of-fold
/// predictions).
#[derive(Debug, Clone)]
pub struct FoldData {
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<u8>,
    pub x_val: Vec<Vec<f64>>,
    pub y_val: Vec<u8>,
    pub val_positions: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCvRow {
    pub hp: HyperParams,
    /// AUROC per fold; None where the held fold was single-class.
    pub fold_aurocs: Vec<Option<f64>>,
    pub mean_auroc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub best: HyperParams,
    pub table: Vec<GridCvRow>,
    /// Out-of-fold predictions at the best grid point, aligned to the row
    /// order behind the folds; None for rows outside every fold.
    pub best_oof: Vec<Option<f64>>,
}

/// The default grid spans the tuned knobs at desk scale.
pub fn default_grid(seed: u64) -> Vec<HyperParams> {
    let mut grid = Vec::new();
    for n_trees in [100, 300] {
        for max_features in [MaxFeatures::Sqrt, MaxFeatures::Fraction(0.25), MaxFeatures::Fraction(1.0)] {
            for min_samples_leaf in [1, 5, 25] {
                grid.push(HyperParams {
                    n_trees,
                    max_features,
                    min_samples_leaf,
                    max_depth: None,
                    class_weight_mode: ClassWeightMode::Balanced,
                    seed,
                });
            }
        }
    }
    grid
}

/// Candidate `b` wins a mean-AUROC tie over `a` only with fewer trees or,
/// at equal size, a larger leaf minimum; otherwise grid order stands.
fn tie_prefers(b: &HyperParams, a: &HyperParams) -> bool {
    if b.n_trees != a.n_trees {
        return b.n_trees < a.n_trees;
    }
    b.min_samples_leaf > a.min_samples_leaf
}

/// Cross-validate every grid point over prebuilt folds.
pub fn grid_search_cv_folds(folds: &[FoldData], grid: &[HyperParams]) -> Result<GridSearchOutcome> {
    if grid.is_empty() {
        return Err(Error::Fit("empty hyperparameter grid".into()));
    }
    if folds.len() < 2 {
        return Err(Error::Sizing(format!(
            "{} folds; cross-validation needs at least 2",
            folds.len()
        )));
    }
    let n_rows = folds
        .iter()
        .flat_map(|f| f.val_positions.iter())
        .max()
        .map(|m| m + 1)
        .unwrap_or(0);

    // evaluate (grid point, fold) pairs in parallel
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..folds.len()).map(move |f| (g, f)))
        .collect();
    let results: Vec<(Option<f64>, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(g, f)| -> Result<(Option<f64>, Vec<f64>)> {
            let fold = &folds[f];
            let mut hp = grid[g];
            hp.seed = rng::mix(grid[g].seed, 1000 + f as u64);
            let forest = fit_forest(&fold.x_train, &fold.y_train, &hp)?;
            let preds: Vec<f64> = fold
                .x_val
                .iter()
                .map(|row| predict_proba(&forest, row))
                .collect::<Result<_>>()?;
            let score = match auroc(&preds, &fold.y_val) {
                Ok(a) => Some(a),
                Err(Error::UndefinedMetric(_)) => {
                    log::warn!("fold {f} single-class; AUROC undefined, excluded from the mean");
                    None
                }
                Err(e) => return Err(e),
            };
            Ok((score, preds))
        })
        .collect::<Result<_>>()?;

    let mut table: Vec<GridCvRow> = Vec::with_capacity(grid.len());
    for (g, hp) in grid.iter().enumerate() {
        let fold_aurocs: Vec<Option<f64>> = (0..folds.len())
            .map(|f| results[g * folds.len() + f].0)
            .collect();
        let defined: Vec<f64> = fold_aurocs.iter().filter_map(|v| *v).collect();
        let mean_auroc = if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        };
        table.push(GridCvRow {
            hp: *hp,
            fold_aurocs,
            mean_auroc,
        });
    }

    let mut best_idx: Option<usize> = None;
    for (g, row) in table.iter().enumerate() {
        let Some(mean) = row.mean_auroc else { continue };
        match best_idx {
            None => best_idx = Some(g),
            Some(b) => {
                let best_mean = table[b].mean_auroc.unwrap();
                if mean > best_mean
                    || (mean == best_mean && tie_prefers(&row.hp, &table[b].hp))
                {
                    best_idx = Some(g);
                }
            }
        }
    }
    let best_idx = best_idx.ok_or_else(|| {
        Error::UndefinedMetric("every fold was single-class for every grid point".into())
    })?;

    let mut best_oof: Vec<Option<f64>> = vec![None; n_rows];
    for (f, fold) in folds.iter().enumerate() {
        let preds = &results[best_idx * folds.len() + f].1;
        for (pos, p) in fold.val_positions.iter().zip(preds) {
            best_oof[*pos] = Some(*p);
        }
    }

    Ok(GridSearchOutcome {
        best: table[best_idx].hp,
        table,
        best_oof,
    })
}

/// Spec-level entry point: rows with a fold index per row (usize::MAX or any
/// out-of-range index excludes a row, e.g. holdout cases).
pub fn grid_search_cv(
    x: &[Vec<f64>],
    y: &[u8],
    row_folds: &[usize],
    n_folds: usize,
    grid: &[HyperParams],
) -> Result<GridSearchOutcome> {
    if x.len() != y.len() || x.len() != row_folds.len() {
        return Err(Error::Fit("row/label/fold length mismatch".into()));
    }
    let folds = build_folds(x, y, row_folds, n_folds);
    grid_search_cv_folds(&folds, grid)
}

pub(crate) fn build_folds(
    x: &[Vec<f64>],
    y: &[u8],
    row_folds: &[usize],
    n_folds: usize,
) -> Vec<FoldData> {
    (0..n_folds)
        .map(|f| {
            let mut fold = FoldData {
                x_train: Vec::new(),
                y_train: Vec::new(),
                x_val: Vec::new(),
                y_val: Vec::new(),
                val_positions: Vec::new(),
            };
            for i in 0..x.len() {
                if row_folds[i] == f {
                    fold.x_val.push(x[i].clone());
                    fold.y_val.push(y[i]);
                    fold.val_positions.push(i);
                } else if row_folds[i] < n_folds {
                    fold.x_train.push(x[i].clone());
                    fold.y_train.push(y[i]);
                }
            }
            fold
        })
        .collect()
}

/// Univariate filter: indices of the k features with the largest absolute
/// point-biserial correlation with the labels, in ascending index order.
pub fn select_k_best(x: &[Vec<f64>], y: &[u8], k: usize) -> Result<Vec<usize>> {
    if x.is_empty() {
        return Err(Error::InsufficientData("empty feature matrix".into()));
    }
    let n = x.len() as f64;
    let n_features = x[0].len();
    let mean_y = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let sd_y = (y.iter().map(|&v| (v as f64 - mean_y).powi(2)).sum::<f64>() / n).sqrt();
    let mut scored: Vec<(usize, f64)> = (0..n_features)
        .map(|f| {
            let mean_x = x.iter().map(|row| row[f]).sum::<f64>() / n;
            let sd_x = (x.iter().map(|row| (row[f] - mean_x).powi(2)).sum::<f64>() / n).sqrt();
            if sd_x == 0.0 || sd_y == 0.0 {
                return (f, 0.0);
            }
            let cov = x
                .iter()
                .zip(y)
                .map(|(row, &label)| (row[f] - mean_x) * (label as f64 - mean_y))
                .sum::<f64>()
                / n;
            (f, (cov / (sd_x * sd_y)).abs())
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut kept: Vec<usize> = scored.iter().take(k.min(n_features)).map(|(f, _)| *f).collect();
    kept.sort_unstable();
    Ok(kept)
}
