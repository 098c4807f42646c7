//! Single CART tree: greedy splits minimizing class-weighted Gini impurity
//! over a per-split random feature subset, with midpoint thresholds between
//! consecutive distinct sorted values.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HyperParams;
use crate::error::{Error, Result};

/// Arena node. `feature < 0` marks a leaf; leaves carry the weighted class
/// sums, internal nodes route `value <= threshold` left, else right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatNode {
    #[serde(rename = "f")]
    pub feature: i64,
    #[serde(rename = "t")]
    pub threshold: f64,
    #[serde(rename = "l")]
    pub left: u32,
    #[serde(rename = "r")]
    pub right: u32,
    #[serde(rename = "w")]
    pub class_weight_sums: (f64, f64),
}

impl FlatNode {
    pub fn is_leaf(&self) -> bool {
        self.feature < 0
    }

    fn leaf(w0: f64, w1: f64) -> FlatNode {
        FlatNode {
            feature: -1,
            threshold: 0.0,
            left: 0,
            right: 0,
            class_weight_sums: (w0, w1),
        }
    }
}

/// Positive-class probability from one tree: the leaf's weighted positive
/// fraction.
pub fn predict_tree(nodes: &[FlatNode], x: &[f64]) -> f64 {
    let mut i = 0usize;
    loop {
        let node = &nodes[i];
        if node.is_leaf() {
            let (w0, w1) = node.class_weight_sums;
            return w1 / (w0 + w1);
        }
        i = if x[node.feature as usize] <= node.threshold {
            node.left as usize
        } else {
            node.right as usize
        };
    }
}

/// Fit a tree on rows of `x` (labels `y`, per-sample `weights`).
pub fn fit_tree(
    x: &[Vec<f64>],
    y: &[u8],
    weights: &[f64],
    hp: &HyperParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FlatNode>> {
    let map: Vec<usize> = (0..x.len()).collect();
    fit_tree_mapped(x, &map, y, weights, hp, rng)
}

/// Fit on virtual rows `map[i]` of `x`; `y`/`weights` align with `map`
/// (not with `x`), which lets bootstrap resamples avoid copying the matrix.
pub(crate) fn fit_tree_mapped(
    x: &[Vec<f64>],
    map: &[usize],
    y: &[u8],
    weights: &[f64],
    hp: &HyperParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FlatNode>> {
    hp.validate()?;
    if map.is_empty() {
        return Err(Error::Fit("no training rows".into()));
    }
    if map.len() != y.len() || y.len() != weights.len() {
        return Err(Error::Fit("row/label/weight length mismatch".into()));
    }
    if map.len() < hp.min_samples_leaf {
        return Err(Error::Fit(format!(
            "{} rows cannot satisfy min_samples_leaf {}",
            map.len(),
            hp.min_samples_leaf
        )));
    }
    let n_features = x[0].len();
    let k = hp.max_features.resolve(n_features)?;
    let total_weight: f64 = weights.iter().sum();
    if total_weight <= 0.0 {
        return Err(Error::Fit("zero total sample weight".into()));
    }

    let mut nodes: Vec<FlatNode> = vec![FlatNode::leaf(0.0, 0.0)];
    // stack of (node slot, virtual rows, depth); LIFO with left pushed last
    let mut stack: Vec<(usize, Vec<usize>, usize)> = vec![(0, (0..map.len()).collect(), 0)];
    let mut pool: Vec<usize> = (0..n_features).collect();

    while let Some((slot, rows, depth)) = stack.pop() {
        let mut w0 = 0.0;
        let mut w1 = 0.0;
        for &v in &rows {
            if y[v] == 1 {
                w1 += weights[v];
            } else {
                w0 += weights[v];
            }
        }
        nodes[slot].class_weight_sums = (w0, w1);

        let pure = w0 == 0.0 || w1 == 0.0;
        let depth_capped = hp.max_depth.map_or(false, |d| depth >= d);
        let too_small = rows.len() < 2 * hp.min_samples_leaf;
        if pure || depth_capped || too_small {
            continue; // already a leaf
        }

        // feature subset: partial Fisher-Yates, then sorted for a canonical
        // scan order
        for i in 0..k {
            let j = rng.gen_range(i..n_features);
            pool.swap(i, j);
        }
        let mut candidates: Vec<usize> = pool[..k].to_vec();
        candidates.sort_unstable();

        let parent_score = gini_score(w0, w1);
        let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for &feature in &candidates {
            sorted.clear();
            sorted.extend(rows.iter().map(|&v| (x[map[v]][feature], v)));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            let mut left0 = 0.0;
            let mut left1 = 0.0;
            for i in 0..sorted.len() - 1 {
                let v = sorted[i].1;
                if y[v] == 1 {
                    left1 += weights[v];
                } else {
                    left0 += weights[v];
                }
                if sorted[i].0 == sorted[i + 1].0 {
                    continue; // threshold must separate distinct values
                }
                let left_count = i + 1;
                let right_count = sorted.len() - left_count;
                if left_count < hp.min_samples_leaf || right_count < hp.min_samples_leaf {
                    continue;
                }
                let (right0, right1) = (w0 - left0, w1 - left1);
                if left0 + left1 <= 0.0 || right0 + right1 <= 0.0 {
                    continue;
                }
                let score = gini_score(left0, left1) + gini_score(right0, right1);
                if best.map_or(score < parent_score, |(b, _, _)| score < b) {
                    let threshold = sorted[i].0 + (sorted[i + 1].0 - sorted[i].0) / 2.0;
                    best = Some((score, feature, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            continue; // no valid improving split; stays a leaf
        };
        let mut left_rows = Vec::new();
        let mut right_rows = Vec::new();
        for &v in &rows {
            if x[map[v]][feature] <= threshold {
                left_rows.push(v);
            } else {
                right_rows.push(v);
            }
        }
        let left_slot = nodes.len();
        nodes.push(FlatNode::leaf(0.0, 0.0));
        let right_slot = nodes.len();
        nodes.push(FlatNode::leaf(0.0, 0.0));
        nodes[slot].feature = feature as i64;
        nodes[slot].threshold = threshold;
        nodes[slot].left = left_slot as u32;
        nodes[slot].right = right_slot as u32;
        stack.push((right_slot, right_rows, depth + 1));
        stack.push((left_slot, left_rows, depth + 1));
    }
    Ok(nodes)
}

/// Weighted Gini contribution W * (1 - p0^2 - p1^2) of one child.
fn gini_score(w0: f64, w1: f64) -> f64 {
    let w = w0 + w1;
    let p0 = w0 / w;
    let p1 = w1 / w;
    w * (1.0 - p0 * p0 - p1 * p1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{ClassWeightMode, MaxFeatures};
    use crate::rng;

    fn hp(max_features: MaxFeatures, min_samples_leaf: usize) -> HyperParams {
        HyperParams {
            n_trees: 1,
            max_features,
            min_samples_leaf,
            max_depth: None,
            class_weight_mode: ClassWeightMode::None,
            seed: 0,
        }
    }

    #[test]
    fn pure_input_is_single_leaf() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let y = [1, 1, 1];
        let w = [1.0, 1.0, 1.0];
        let tree = fit_tree(&x, &y, &w, &hp(MaxFeatures::All, 1), &mut rng::stream(0, 0)).unwrap();
        assert_eq!(tree.len(), 1);
        assert!(tree[0].is_leaf());
        assert_eq!(predict_tree(&tree, &[9.0]), 1.0);
    }

    #[test]
    fn threshold_separable_1d() {
        // x < 0 -> 0, x >= 0 -> 1: depth-1 tree, training accuracy 1
        let xs = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
        let x: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
        let y = [0, 0, 0, 1, 1, 1];
        let w = [1.0; 6];
        let tree = fit_tree(&x, &y, &w, &hp(MaxFeatures::Count(1), 1), &mut rng::stream(1, 0)).unwrap();
        assert_eq!(tree.len(), 3, "one internal node and two leaves");
        assert_eq!(tree[0].threshold, 0.0, "unique optimal split at the midpoint");
        for (row, label) in x.iter().zip(y) {
            let p = predict_tree(&tree, row);
            assert_eq!((p >= 0.5) as u8, label);
        }

        // exhaustive split-point oracle: every other candidate scores worse
        let chosen_score = gini_score(0.0, 3.0) + gini_score(3.0, 0.0);
        for i in 0..xs.len() - 1 {
            if xs[i] == xs[i + 1] {
                continue;
            }
            let t = (xs[i] + xs[i + 1]) / 2.0;
            if t == tree[0].threshold {
                continue;
            }
            let l1 = y.iter().zip(xs).filter(|(&yy, xx)| *xx <= t && yy == 1).count() as f64;
            let l0 = y.iter().zip(xs).filter(|(&yy, xx)| *xx <= t && yy == 0).count() as f64;
            let r1 = 3.0 - l1;
            let r0 = 3.0 - l0;
            let score = gini_score(l0, l1) + gini_score(r0, r1);
            assert!(score > chosen_score, "candidate {t} should be strictly worse");
        }
    }

    #[test]
    fn weighted_equals_duplicated() {
        // weight 2 on a row == that row duplicated, identical tree
        let x_weighted = vec![vec![1.0, 5.0], vec![2.0, 3.0], vec![4.0, 1.0], vec![5.0, 2.0]];
        let y_weighted = [0, 0, 1, 1];
        let w_weighted = [1.0, 2.0, 1.0, 1.0];

        let x_duped = vec![
            vec![1.0, 5.0],
            vec![2.0, 3.0],
            vec![2.0, 3.0],
            vec![4.0, 1.0],
            vec![5.0, 2.0],
        ];
        let y_duped = [0, 0, 0, 1, 1];
        let w_duped = [1.0; 5];

        let params = hp(MaxFeatures::All, 1);
        let a = fit_tree(&x_weighted, &y_weighted, &w_weighted, &params, &mut rng::stream(7, 0)).unwrap();
        let b = fit_tree(&x_duped, &y_duped, &w_duped, &params, &mut rng::stream(7, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_weight_is_fit_error() {
        let x = vec![vec![1.0], vec![2.0]];
        let y = [0, 1];
        let w = [0.0, 0.0];
        assert!(matches!(
            fit_tree(&x, &y, &w, &hp(MaxFeatures::All, 1), &mut rng::stream(0, 0)),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn min_samples_leaf_respected() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let w = [1.0; 10];
        let tree = fit_tree(&x, &y, &w, &hp(MaxFeatures::All, 3), &mut rng::stream(2, 0)).unwrap();
        // count rows reaching each leaf
        for node in tree.iter().filter(|n| n.is_leaf()) {
            let count = node.class_weight_sums.0 + node.class_weight_sums.1;
            assert!(count >= 3.0, "leaf holds {count} rows");
        }
    }

    #[test]
    fn max_depth_zero_is_single_leaf() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = [0, 1];
        let w = [1.0; 2];
        let mut params = hp(MaxFeatures::All, 1);
        params.max_depth = Some(0);
        let tree = fit_tree(&x, &y, &w, &params, &mut rng::stream(3, 0)).unwrap();
        assert_eq!(tree.len(), 1);
        assert_eq!(predict_tree(&tree, &[0.5]), 0.5);
    }
}
