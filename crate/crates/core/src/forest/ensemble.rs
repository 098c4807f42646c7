//! Bagged forest: each tree fits a bootstrap resample (with replacement,
//! size N) under per-sample class weights computed from the full training
//! labels. Tree t derives its RNG stream from (seed, t), so fitting is
//! deterministic and embarrassingly parallel.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree_mapped, predict_tree, FlatNode};
use super::{class_weights, HyperParams};
use crate::error::{Error, Result};
use crate::rng;

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    pub version: u32,
    pub hyperparams: HyperParams,
    pub feature_count: usize,
    /// Rows the forest was fit on; lets out-of-bag index streams regenerate.
    pub n_train_rows: usize,
    pub oob_available: bool,
    pub trees: Vec<Vec<FlatNode>>,
}

fn bootstrap_indices(seed: u64, tree_index: u64, n: usize) -> (Vec<usize>, rand_chacha::ChaCha8Rng) {
    let mut stream = rng::stream(seed, tree_index);
    let indices = (0..n).map(|_| stream.gen_range(0..n)).collect();
    (indices, stream)
}

pub fn fit_forest(x: &[Vec<f64>], y: &[u8], hp: &HyperParams) -> Result<Forest> {
    hp.validate()?;
    if x.is_empty() {
        return Err(Error::Fit("no training rows".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Fit("row/label length mismatch".into()));
    }
    let feature_count = x[0].len();
    if x.iter().any(|row| row.len() != feature_count) {
        return Err(Error::Fit("ragged feature matrix".into()));
    }
    let weights = class_weights(y, hp.class_weight_mode)?;
    let n = x.len();
    let trees: Vec<Vec<FlatNode>> = (0..hp.n_trees as u64)
        .into_par_iter()
        .map(|t| {
            let (indices, mut stream) = bootstrap_indices(hp.seed, t, n);
            let by: Vec<u8> = indices.iter().map(|&i| y[i]).collect();
            let bw: Vec<f64> = indices.iter().map(|&i| weights[y[i] as usize]).collect();
            fit_tree_mapped(x, &indices, &by, &bw, hp, &mut stream)
        })
        .collect::<Result<_>>()?;
    Ok(Forest {
        version: FOREST_FORMAT_VERSION,
        hyperparams: *hp,
        feature_count,
        n_train_rows: n,
        oob_available: true,
        trees,
    })
}

/// Mean over trees of the leaf weighted-positive fraction.
pub fn predict_proba(forest: &Forest, x: &[f64]) -> Result<f64> {
    if x.len() != forest.feature_count {
        return Err(Error::Shape {
            expected: forest.feature_count,
            got: x.len(),
        });
    }
    let sum: f64 = forest.trees.iter().map(|t| predict_tree(t, x)).sum();
    Ok(sum / forest.trees.len() as f64)
}

pub fn predict_proba_batch(forest: &Forest, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.par_iter().map(|row| predict_proba(forest, row)).collect()
}

/// Out-of-bag probability per training row: the mean over trees whose
/// bootstrap missed that row. None for rows every tree sampled.
pub fn oob_predictions(forest: &Forest, x: &[Vec<f64>]) -> Result<Vec<Option<f64>>> {
    if !forest.oob_available {
        return Err(Error::Fit("forest was not fit with bootstrap bagging".into()));
    }
    if x.len() != forest.n_train_rows {
        return Err(Error::Shape {
            expected: forest.n_train_rows,
            got: x.len(),
        });
    }
    let n = x.len();
    let per_tree: Vec<(Vec<bool>, Vec<f64>)> = forest
        .trees
        .par_iter()
        .enumerate()
        .map(|(t, tree)| {
            let (indices, _) = bootstrap_indices(forest.hyperparams.seed, t as u64, n);
            let mut inbag = vec![false; n];
            for &i in &indices {
                inbag[i] = true;
            }
            let preds: Vec<f64> = x.iter().map(|row| predict_tree(tree, row)).collect();
            (inbag, preds)
        })
        .collect();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (inbag, preds) in &per_tree {
        for i in 0..n {
            if !inbag[i] {
                sums[i] += preds[i];
                counts[i] += 1;
            }
        }
    }
    Ok((0..n)
        .map(|i| (counts[i] > 0).then(|| sums[i] / counts[i] as f64))
        .collect())
}

/// OOB accuracy at the 0.5 cut, over rows with an OOB estimate.
pub fn oob_accuracy(forest: &Forest, x: &[Vec<f64>], y: &[u8]) -> Result<f64> {
    let preds = oob_predictions(forest, x)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (pred, &label) in preds.iter().zip(y) {
        if let Some(p) = pred {
            total += 1;
            if ((*p >= 0.5) as u8) == label {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric("no out-of-bag rows".into()));
    }
    Ok(correct as f64 / total as f64)
}

pub fn save_forest(forest: &Forest, path: &Path) -> Result<()> {
    let text = serde_json::to_string(forest)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_forest(path: &Path) -> Result<Forest> {
    let text = std::fs::read_to_string(path)?;
    let forest: Forest = serde_json::from_str(&text)?;
    if forest.version != FOREST_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "forest format version {} unsupported (expected {FOREST_FORMAT_VERSION})",
            forest.version
        )));
    }
    Ok(forest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{ClassWeightMode, MaxFeatures};

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        // two separable 2-D Gaussian blobs
        let mut stream = rng::stream(seed, 0);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u8;
            let center = if label == 1 { 2.5 } else { -2.5 };
            let gauss = |r: &mut rand_chacha::ChaCha8Rng| {
                let u1: f64 = r.gen::<f64>().max(1e-12);
                let u2: f64 = r.gen();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            };
            x.push(vec![center + gauss(&mut stream), center + gauss(&mut stream)]);
            y.push(label);
        }
        (x, y)
    }

    fn hp(n_trees: usize, seed: u64) -> HyperParams {
        HyperParams {
            n_trees,
            max_features: MaxFeatures::Sqrt,
            min_samples_leaf: 1,
            max_depth: None,
            class_weight_mode: ClassWeightMode::Balanced,
            seed,
        }
    }

    #[test]
    fn single_distinct_row_is_constant_predictor() {
        let x = vec![vec![1.0, 2.0]; 8];
        let y = [1u8; 8];
        let forest = fit_forest(&x, &y, &hp(1, 3)).unwrap();
        assert_eq!(predict_proba(&forest, &[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn same_seed_bit_identical_serialization() {
        let (x, y) = blobs(120, 5);
        let a = fit_forest(&x, &y, &hp(20, 11)).unwrap();
        let b = fit_forest(&x, &y, &hp(20, 11)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn oob_accuracy_high_on_blobs() {
        let (x, y) = blobs(400, 7);
        let forest = fit_forest(&x, &y, &hp(60, 2)).unwrap();
        let acc = oob_accuracy(&forest, &x, &y).unwrap();
        assert!(acc >= 0.95, "oob accuracy {acc}");
    }

    #[test]
    fn probabilities_bounded_and_match_tree_walk_oracle() {
        let (x, y) = blobs(150, 9);
        let forest = fit_forest(&x, &y, &hp(15, 4)).unwrap();
        let mut stream = rng::stream(31, 0);
        for _ in 0..100 {
            let probe = vec![stream.gen_range(-5.0..5.0), stream.gen_range(-5.0..5.0)];
            let p = predict_proba(&forest, &probe).unwrap();
            assert!((0.0..=1.0).contains(&p));
            // independent per-tree traversal oracle
            let mut oracle = 0.0;
            for tree in &forest.trees {
                let mut i = 0usize;
                loop {
                    let node = &tree[i];
                    if node.is_leaf() {
                        let (w0, w1) = node.class_weight_sums;
                        oracle += w1 / (w0 + w1);
                        break;
                    }
                    i = if probe[node.feature as usize] <= node.threshold {
                        node.left as usize
                    } else {
                        node.right as usize
                    };
                }
            }
            oracle /= forest.trees.len() as f64;
            assert_eq!(p, oracle);
        }
    }

    #[test]
    fn two_tree_mean() {
        // forests of single leaves: tree probabilities 0.2 and 0.6 -> 0.4
        let leaf = |w0: f64, w1: f64| {
            vec![FlatNode {
                feature: -1,
                threshold: 0.0,
                left: 0,
                right: 0,
                class_weight_sums: (w0, w1),
            }]
        };
        let forest = Forest {
            version: FOREST_FORMAT_VERSION,
            hyperparams: hp(2, 0),
            feature_count: 1,
            n_train_rows: 2,
            oob_available: false,
            trees: vec![leaf(8.0, 2.0), leaf(4.0, 6.0)],
        };
        assert_eq!(predict_proba(&forest, &[0.0]).unwrap(), 0.4);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (x, y) = blobs(50, 1);
        let forest = fit_forest(&x, &y, &hp(5, 0)).unwrap();
        assert!(matches!(
            predict_proba(&forest, &[1.0, 2.0, 3.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn forest_round_trips_through_json() {
        let (x, y) = blobs(80, 2);
        let forest = fit_forest(&x, &y, &hp(10, 6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forest.json");
        save_forest(&forest, &path).unwrap();
        let loaded = load_forest(&path).unwrap();
        for row in &x {
            assert_eq!(
                predict_proba(&forest, row).unwrap(),
                predict_proba(&loaded, row).unwrap()
            );
        }
    }

    #[test]
    fn label_flip_does_not_decrease_probability_on_that_point() {
        // flipping one training label 0 -> 1 and refitting with identical
        // seeds never lowers the forest's probability on that exact point
        let (x, mut y) = blobs(60, 3);
        let flip = 10;
        y[flip] = 0;
        let before = predict_proba(&fit_forest(&x, &y, &hp(12, 8)).unwrap(), &x[flip]).unwrap();
        y[flip] = 1;
        let after = predict_proba(&fit_forest(&x, &y, &hp(12, 8)).unwrap(), &x[flip]).unwrap();
        assert!(
            after >= before,
            "flip raised target probability: before {before}, after {after}"
        );
    }
}
