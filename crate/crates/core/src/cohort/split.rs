//! Patient-grouped fold assignment and holdout selection.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::CohortTable;
use crate::error::{Error, Result};
use crate::rng;

/// How the final-validation holdout is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum HoldoutSpec {
    /// Random fraction of patient groups.
    Fraction(f64),
    /// Cases with `surgery_start >= cutoff` are held out (later time period).
    DateCutoff(f64),
}

impl HoldoutSpec {
    pub fn none() -> Self {
        HoldoutSpec::Fraction(0.0)
    }
}

/// Disjoint cross-validation folds plus a final-validation holdout set.
/// All cases of one patient land in the same partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n_folds: usize,
    pub fold_assignment: BTreeMap<String, usize>,
    pub holdout: HashSet<String>,
}

impl SplitPlan {
    pub fn fold_of(&self, case_id: &str) -> Option<usize> {
        self.fold_assignment.get(case_id).copied()
    }

    pub fn is_holdout(&self, case_id: &str) -> bool {
        self.holdout.contains(case_id)
    }

    /// Case ids of one fold, in assignment-map order.
    pub fn fold_members(&self, fold: usize) -> Vec<&str> {
        self.fold_assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Assign patient groups to `n_folds` disjoint folds after carving out the
/// holdout. Deterministic for a fixed seed; fold sizes differ by at most one
/// patient group.
pub fn make_split(
    cohort: &CohortTable,
    n_folds: usize,
    holdout: HoldoutSpec,
    seed: u64,
) -> Result<SplitPlan> {
    if n_folds < 2 {
        return Err(Error::Sizing(format!("n_folds must be >= 2, got {n_folds}")));
    }
    if let HoldoutSpec::Fraction(f) = holdout {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Sizing(format!(
                "holdout fraction must be in [0, 1), got {f}"
            )));
        }
    }

    // Group case ids by patient, keeping first-seen patient order.
    let mut patient_order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&str>> = HashMap::new();
    for case in &cohort.cases {
        let entry = groups.entry(case.patient_id.as_str()).or_insert_with(|| {
            patient_order.push(case.patient_id.as_str());
            Vec::new()
        });
        entry.push(case.case_id.as_str());
    }

    let mut holdout_ids: HashSet<String> = HashSet::new();
    let mut foldable: Vec<&str> = Vec::new();
    match holdout {
        HoldoutSpec::DateCutoff(cutoff) => {
            // A patient group goes to the holdout if ANY of its cases falls at
            // or past the cutoff, so no patient straddles the boundary.
            let late: HashSet<&str> = cohort
                .cases
                .iter()
                .filter(|c| c.surgery_start >= cutoff)
                .map(|c| c.patient_id.as_str())
                .collect();
            for patient in &patient_order {
                if late.contains(patient) {
                    holdout_ids.extend(groups[patient].iter().map(|s| s.to_string()));
                } else {
                    foldable.push(patient);
                }
            }
        }
        HoldoutSpec::Fraction(fraction) => {
            let mut shuffled = patient_order.clone();
            shuffled.shuffle(&mut rng::stream(seed, 0x01));
            let n_holdout = (shuffled.len() as f64 * fraction).round() as usize;
            for (i, patient) in shuffled.iter().enumerate() {
                if i < n_holdout {
                    holdout_ids.extend(groups[patient].iter().map(|s| s.to_string()));
                } else {
                    foldable.push(patient);
                }
            }
        }
    }

    if foldable.len() < n_folds {
        return Err(Error::Sizing(format!(
            "{} patient groups available for {n_folds} folds",
            foldable.len()
        )));
    }

    let mut shuffled = foldable;
    shuffled.shuffle(&mut rng::stream(seed, 0x02));
    let mut fold_assignment = BTreeMap::new();
    for (i, patient) in shuffled.iter().enumerate() {
        let fold = i % n_folds;
        for case_id in &groups[patient] {
            fold_assignment.insert(case_id.to_string(), fold);
        }
    }

    Ok(SplitPlan {
        n_folds,
        fold_assignment,
        holdout: holdout_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{CaseRecord, FeatureSchema};
    use proptest::prelude::*;
    use std::collections::BTreeMap as Map;

    fn case(case_id: &str, patient_id: &str, start: f64) -> CaseRecord {
        CaseRecord {
            case_id: case_id.into(),
            patient_id: patient_id.into(),
            admission_id: case_id.into(),
            surgery_start: start,
            tabular: Default::default(),
            channels: Vec::new(),
            outcomes: Map::new(),
            external_probs: Map::new(),
        }
    }

    fn cohort(cases: Vec<CaseRecord>) -> CohortTable {
        CohortTable {
            schema: FeatureSchema::new(vec![], Default::default()).unwrap(),
            cases,
        }
    }

    #[test]
    fn ten_patients_five_folds_exact() {
        let cases = (0..10).map(|i| case(&format!("S{i}"), &format!("P{i}"), i as f64)).collect();
        let plan = make_split(&cohort(cases), 5, HoldoutSpec::none(), 7).unwrap();
        let mut sizes = [0usize; 5];
        for (_, &f) in &plan.fold_assignment {
            sizes[f] += 1;
        }
        assert_eq!(sizes, [2, 2, 2, 2, 2]);
        assert!(plan.holdout.is_empty());
    }

    #[test]
    fn determinism_for_fixed_seed() {
        let cases: Vec<_> = (0..37).map(|i| case(&format!("S{i}"), &format!("P{}", i / 2), i as f64)).collect();
        let a = make_split(&cohort(cases.clone()), 5, HoldoutSpec::Fraction(0.2), 11).unwrap();
        let b = make_split(&cohort(cases), 5, HoldoutSpec::Fraction(0.2), 11).unwrap();
        assert_eq!(a.fold_assignment, b.fold_assignment);
        assert_eq!(a.holdout, b.holdout);
    }

    #[test]
    fn holdout_fraction_disjoint_and_covering() {
        // 100 single-case patients, 20% holdout: exhaustive set check.
        let cases: Vec<_> = (0..100).map(|i| case(&format!("S{i}"), &format!("P{i}"), i as f64)).collect();
        let table = cohort(cases);
        let plan = make_split(&table, 5, HoldoutSpec::Fraction(0.2), 3).unwrap();
        assert_eq!(plan.holdout.len(), 20);
        assert_eq!(plan.fold_assignment.len(), 80);
        let mut seen: HashSet<&String> = HashSet::new();
        for id in plan.fold_assignment.keys() {
            assert!(!plan.holdout.contains(id), "case {id} in both fold and holdout");
            assert!(seen.insert(id));
        }
        let all: HashSet<String> = table.cases.iter().map(|c| c.case_id.clone()).collect();
        let mut covered: HashSet<String> = plan.holdout.clone();
        covered.extend(plan.fold_assignment.keys().cloned());
        assert_eq!(covered, all);
    }

    #[test]
    fn date_cutoff_respects_patient_grouping() {
        // P0 has one case before and one after the cutoff: both go to holdout.
        let cases = vec![
            case("S0", "P0", 1.0),
            case("S1", "P0", 9.0),
            case("S2", "P1", 2.0),
            case("S3", "P2", 3.0),
            case("S4", "P3", 4.0),
        ];
        let plan = make_split(&cohort(cases), 2, HoldoutSpec::DateCutoff(8.0), 1).unwrap();
        assert!(plan.holdout.contains("S0"));
        assert!(plan.holdout.contains("S1"));
        assert_eq!(plan.fold_assignment.len(), 3);
    }

    #[test]
    fn too_few_groups_is_sizing_error() {
        let cases = vec![case("S0", "P0", 0.0), case("S1", "P0", 1.0)];
        assert!(matches!(
            make_split(&cohort(cases), 5, HoldoutSpec::none(), 0).unwrap_err(),
            Error::Sizing(_)
        ));
    }

    proptest! {
        #[test]
        fn partition_property(seed in 0u64..500, n in 24usize..60, frac in 0.0f64..0.4) {
            // Random cohorts with multi-case patients: folds pairwise disjoint,
            // union = non-holdout cases, patients never straddle partitions.
            let cases: Vec<_> = (0..n)
                .map(|i| case(&format!("S{i}"), &format!("P{}", i % (n / 2)), i as f64))
                .collect();
            let table = cohort(cases);
            let plan = make_split(&table, 5, HoldoutSpec::Fraction(frac), seed).unwrap();

            let mut covered: HashSet<String> = plan.holdout.clone();
            for id in plan.fold_assignment.keys() {
                prop_assert!(covered.insert(id.clone()), "case {id} in two partitions");
            }
            let all: HashSet<String> = table.cases.iter().map(|c| c.case_id.clone()).collect();
            prop_assert_eq!(covered, all);

            // patient grouping: each patient maps into exactly one partition
            let mut partition_of: HashMap<&str, String> = HashMap::new();
            for c in &table.cases {
                let part = if plan.is_holdout(&c.case_id) {
                    "holdout".to_string()
                } else {
                    format!("fold{}", plan.fold_of(&c.case_id).unwrap())
                };
                if let Some(prev) = partition_of.insert(c.patient_id.as_str(), part.clone()) {
                    prop_assert_eq!(prev, part, "patient {} straddles partitions", c.patient_id);
                }
            }

            // fold sizes differ by at most one patient group
            let mut fold_groups: Vec<HashSet<&str>> = vec![HashSet::new(); 5];
            for c in &table.cases {
                if let Some(f) = plan.fold_of(&c.case_id) {
                    fold_groups[f].insert(c.patient_id.as_str());
                }
            }
            let sizes: Vec<usize> = fold_groups.iter().map(|g| g.len()).collect();
            let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(max - min <= 1, "unbalanced folds: {:?}", sizes);
        }
    }
}
