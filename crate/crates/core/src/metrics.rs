//! Detection and isolation scoring.

use serde::{Deserialize, Serialize};

use crate::model::FaultVariant;
use crate::{Error, Result};

/// Detection scores over (truth, prediction) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    /// `confusion[truth][prediction]` with index 0 = healthy, 1 = faulty.
    pub confusion: [[usize; 2]; 2],
    /// Total detection rate: correctly classified signals over all signals.
    pub tdr: f64,
    /// False alarm rate: false positives over the healthy count.
    pub far: f64,
}

/// Scores detection decisions; each pair is
/// `(truth is faulty, flagged faulty)`.
pub fn evaluate_detection(pairs: &[(bool, bool)]) -> Result<DetectionMetrics> {
    if pairs.is_empty() {
        return Err(Error::Empty("no detection outcomes to score".into()));
    }
    let mut confusion = [[0usize; 2]; 2];
    for &(truth, predicted) in pairs {
        confusion[truth as usize][predicted as usize] += 1;
    }
    let total = pairs.len();
    let correct = confusion[0][0] + confusion[1][1];
    let healthy = confusion[0][0] + confusion[0][1];
    let far = if healthy > 0 {
        confusion[0][1] as f64 / healthy as f64
    } else {
        0.0
    };
    Ok(DetectionMetrics {
        confusion,
        tdr: correct as f64 / total as f64,
        far,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: FaultVariant,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Ground-truth count of this class.
    pub support: usize,
}

/// Isolation scores over (truth, prediction) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationMetrics {
    pub class_order: Vec<FaultVariant>,
    /// `confusion[i][j]`: truth `class_order[i]` predicted as
    /// `class_order[j]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassScore>,
    /// Macro-averaged F1 over the classes present in the ground truth.
    pub hma: f64,
    /// Classes that appear only in predictions and are excluded from the
    /// aggregate.
    pub excluded: Vec<FaultVariant>,
}

/// Scores isolation decisions. Classes never seen in the ground truth are
/// excluded from the aggregate score and reported in `excluded`.
pub fn evaluate_isolation(pairs: &[(FaultVariant, FaultVariant)]) -> Result<IsolationMetrics> {
    if pairs.is_empty() {
        return Err(Error::Empty("no isolation outcomes to score".into()));
    }
    let mut class_order: Vec<FaultVariant> = pairs
        .iter()
        .flat_map(|&(t, p)| [t, p])
        .collect();
    class_order.sort();
    class_order.dedup();
    let index = |class: FaultVariant| class_order.iter().position(|&c| c == class).unwrap();

    let n = class_order.len();
    let mut confusion = vec![vec![0usize; n]; n];
    for &(truth, predicted) in pairs {
        confusion[index(truth)][index(predicted)] += 1;
    }

    let mut per_class = Vec::with_capacity(n);
    let mut excluded = Vec::new();
    let mut f1_sum = 0.0;
    let mut scored = 0usize;
    for (i, &class) in class_order.iter().enumerate() {
        let support: usize = confusion[i].iter().sum();
        let predicted: usize = (0..n).map(|r| confusion[r][i]).sum();
        let tp = confusion[i][i];
        let precision = if predicted > 0 {
            tp as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if support > 0 {
            tp as f64 / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassScore {
            class,
            precision,
            recall,
            f1,
            support,
        });
        if support > 0 {
            f1_sum += f1;
            scored += 1;
        } else {
            excluded.push(class);
        }
    }
    if scored == 0 {
        return Err(Error::Empty("no ground-truth classes to score".into()));
    }
    Ok(IsolationMetrics {
        class_order,
        confusion,
        per_class,
        hma: f1_sum / scored as f64,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn detection_pairs(tn: usize, fp: usize, fn_: usize, tp: usize) -> Vec<(bool, bool)> {
        let mut pairs = Vec::new();
        pairs.extend(std::iter::repeat((false, false)).take(tn));
        pairs.extend(std::iter::repeat((false, true)).take(fp));
        pairs.extend(std::iter::repeat((true, false)).take(fn_));
        pairs.extend(std::iter::repeat((true, true)).take(tp));
        pairs
    }

    #[test]
    fn reference_detection_counts_reproduce_the_reported_rates() {
        // 2474/1 healthy row, 92/1258 faulty row.
        let m = evaluate_detection(&detection_pairs(2474, 1, 92, 1258)).unwrap();
        assert_relative_eq!(m.tdr, 3732.0 / 3825.0, max_relative = 1e-12);
        assert!((m.tdr * 100.0 - 97.6).abs() < 0.05);
        assert_relative_eq!(m.far, 1.0 / 2475.0, max_relative = 1e-12);
        assert!((m.far * 100.0 - 0.04).abs() < 0.005);
        assert_eq!(m.confusion, [[2474, 1], [92, 1258]]);
    }

    #[test]
    fn clean_split_scores_perfectly() {
        let m = evaluate_detection(&detection_pairs(48, 0, 0, 99)).unwrap();
        assert_eq!(m.tdr, 1.0);
        assert_eq!(m.far, 0.0);
    }

    #[test]
    fn perfect_isolation_scores_one() {
        let pairs: Vec<_> = FaultVariant::FAULTS
            .iter()
            .flat_map(|&c| std::iter::repeat((c, c)).take(5))
            .collect();
        let m = evaluate_isolation(&pairs).unwrap();
        assert_eq!(m.hma, 1.0);
        assert!(m.excluded.is_empty());
        for s in &m.per_class {
            assert_eq!(s.f1, 1.0);
        }
    }

    #[test]
    fn reference_confusion_matrix_scores_near_three_quarters() {
        // Rows: EC, FBN(=BN), PBN, SDN, IDN, DDN with the characteristic
        // PBN/SDN/IDN mixups.
        use FaultVariant::*;
        let mut pairs: Vec<(FaultVariant, FaultVariant)> = Vec::new();
        let mut push = |truth: FaultVariant, pred: FaultVariant, count: usize| {
            pairs.extend(std::iter::repeat((truth, pred)).take(count));
        };
        push(EC, EC, 225);
        push(FBN, FBN, 225);
        push(PBN, PBN, 190);
        push(PBN, SDN, 35);
        push(SDN, SDN, 225);
        push(IDN, PBN, 103);
        push(IDN, SDN, 113);
        push(IDN, IDN, 9);
        push(DDN, IDN, 1);
        push(DDN, DDN, 224);
        let m = evaluate_isolation(&pairs).unwrap();
        assert!((m.hma - 0.76).abs() < 0.01, "macro-F1 {:.4}", m.hma);
        // The intermediate drying class is the weak one.
        let idn = m.per_class.iter().find(|s| s.class == IDN).unwrap();
        assert!(idn.f1 < 0.1);
    }

    #[test]
    fn prediction_only_classes_are_excluded_from_the_aggregate() {
        use FaultVariant::*;
        let pairs = vec![(EC, EC), (EC, SDN)];
        let m = evaluate_isolation(&pairs).unwrap();
        assert_eq!(m.excluded, vec![SDN]);
        // Only EC scores: P = 1, R = 0.5, F1 = 2/3.
        assert_relative_eq!(m.hma, 2.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(evaluate_detection(&[]).is_err());
        assert!(evaluate_isolation(&[]).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_pairs() -> impl Strategy<Value = Vec<(FaultVariant, FaultVariant)>> {
            proptest::collection::vec(
                (0usize..6, 0usize..6).prop_map(|(t, p)| {
                    (FaultVariant::FAULTS[t], FaultVariant::FAULTS[p])
                }),
                1..60,
            )
        }

        proptest! {
            /// Scores depend on the multiset of outcomes, not their order.
            #[test]
            fn isolation_scoring_is_permutation_invariant(
                pairs in arb_pairs(),
                seed in 0u64..1000
            ) {
                let m1 = evaluate_isolation(&pairs).unwrap();
                let mut shuffled = pairs.clone();
                // Fisher-Yates driven by a splitmix stream.
                let mut state = seed;
                let mut next = || {
                    state = state.wrapping_add(0x9E3779B97F4A7C15);
                    let mut z = state;
                    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
                    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
                    z ^ (z >> 31)
                };
                for i in (1..shuffled.len()).rev() {
                    let j = (next() % (i as u64 + 1)) as usize;
                    shuffled.swap(i, j);
                }
                let m2 = evaluate_isolation(&shuffled).unwrap();
                prop_assert_eq!(m1, m2);
            }

            #[test]
            fn detection_rates_stay_in_the_unit_interval(
                tn in 0usize..50, fp in 0usize..50,
                fn_ in 0usize..50, tp in 0usize..50
            ) {
                prop_assume!(tn + fp + fn_ + tp > 0);
                let m = evaluate_detection(&detection_pairs(tn, fp, fn_, tp)).unwrap();
                prop_assert!((0.0..=1.0).contains(&m.tdr));
                prop_assert!((0.0..=1.0).contains(&m.far));
            }
        }
    }
}
