//! Ranking metrics: AUC-ROC (Mann-Whitney, ties count one half) and mean
//! average precision.

use crate::error::{Error, Result};

/// AUC for one binary task via midranks. Returns `None` when only one class
/// is present. Ranks are halves, so the result is exact and independent of
/// summation order; it agrees bit for bit with direct pair counting.
pub fn auc_binary(scores: &[f64], labels: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // midranks over tie groups; 1-based ranks
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Some(u / (p * negatives as f64))
}

/// Per-class AUC report for a clips x classes score matrix.
#[derive(Debug, Clone)]
pub struct ClassBalancedAuc {
    /// One entry per class; `None` marks a single-class column that was
    /// excluded from the macro average.
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over the classes that had both labels.
    pub macro_auc: f64,
    pub skipped_classes: Vec<usize>,
}

/// Class-balanced AUC-ROC: per-class Mann-Whitney AUC, macro-averaged with
/// equal class weight. Degenerate (single-label) classes are excluded and
/// reported.
pub fn auc_roc_class_balanced(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
) -> Result<ClassBalancedAuc> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("score/label row counts differ".to_string()));
    }
    if scores.is_empty() {
        return Err(Error::Argument("no clips to evaluate".to_string()));
    }
    let num_classes = scores[0].len();
    for (s, l) in scores.iter().zip(labels) {
        if s.len() != num_classes || l.len() != num_classes {
            return Err(Error::Shape("ragged score/label matrix".to_string()));
        }
    }
    let mut per_class = Vec::with_capacity(num_classes);
    let mut skipped = Vec::new();
    let mut total = 0.0;
    let mut counted = 0usize;
    for class in 0..num_classes {
        let col_scores: Vec<f64> = scores.iter().map(|row| row[class]).collect();
        let col_labels: Vec<bool> = labels.iter().map(|row| row[class]).collect();
        match auc_binary(&col_scores, &col_labels) {
            Some(auc) => {
                total += auc;
                counted += 1;
                per_class.push(Some(auc));
            }
            None => {
                skipped.push(class);
                per_class.push(None);
            }
        }
    }
    if counted == 0 {
        return Err(Error::Task(
            "every class is single-label; no AUC defined".to_string(),
        ));
    }
    Ok(ClassBalancedAuc {
        per_class,
        macro_auc: total / counted as f64,
        skipped_classes: skipped,
    })
}

/// Average precision over one ranked relevance vector:
/// mean over target ranks r of (targets at rank <= r) / r.
pub fn average_precision(relevance: &[bool]) -> Result<f64> {
    let total = relevance.iter().filter(|&&r| r).count();
    if total == 0 {
        return Err(Error::Task("query has no targets in the pool".to_string()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

/// Mean of per-query average precision.
pub fn mean_average_precision(per_query_relevance: &[Vec<bool>]) -> Result<f64> {
    if per_query_relevance.is_empty() {
        return Err(Error::Argument("no queries".to_string()));
    }
    let mut sum = 0.0;
    for rel in per_query_relevance {
        sum += average_precision(rel)?;
    }
    Ok(sum / per_query_relevance.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force oracle: count correctly ordered positive/negative pairs,
    /// ties worth one half.
    fn auc_pairwise_oracle(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let pos: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l)
            .map(|(&s, _)| s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| !l)
            .map(|(&s, _)| s)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut u = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    u += 1.0;
                } else if p == n {
                    u += 0.5;
                }
            }
        }
        Some(u / (pos.len() * neg.len()) as f64)
    }

    /// Oracle for AP straight from the formula over target ranks.
    fn ap_oracle(relevance: &[bool]) -> Option<f64> {
        let ranks: Vec<usize> = relevance
            .iter()
            .enumerate()
            .filter(|(_, &r)| r)
            .map(|(i, _)| i + 1)
            .collect();
        if ranks.is_empty() {
            return None;
        }
        let mut sum = 0.0;
        for (t, &r) in ranks.iter().enumerate() {
            sum += (t + 1) as f64 / r as f64;
        }
        Some(sum / ranks.len() as f64)
    }

    #[test]
    fn hand_case_auc_075() {
        let auc = auc_binary(&[0.9, 0.8, 0.3, 0.1], &[true, false, true, false]).unwrap();
        assert_eq!(auc, 0.75);
        assert_eq!(
            auc_pairwise_oracle(&[0.9, 0.8, 0.3, 0.1], &[true, false, true, false]).unwrap(),
            0.75
        );
    }

    #[test]
    fn perfect_separation_is_one() {
        let auc = auc_binary(&[5.0, 4.0, 1.0, 0.0], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn ties_count_half() {
        let auc = auc_binary(&[1.0, 1.0], &[true, false]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn single_class_is_none() {
        assert!(auc_binary(&[1.0, 2.0], &[true, true]).is_none());
    }

    #[test]
    fn hand_case_ap_five_sixths() {
        let ap = average_precision(&[true, false, true]).unwrap();
        assert_eq!(ap, (1.0 + 2.0 / 3.0) / 2.0);
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn all_targets_first_is_one() {
        assert_eq!(
            average_precision(&[true, true, false, false]).unwrap(),
            1.0
        );
    }

    #[test]
    fn single_target_at_rank_k_is_one_over_k() {
        for n in [3usize, 10, 50] {
            for k in 1..=n {
                let mut rel = vec![false; n];
                rel[k - 1] = true;
                assert_eq!(average_precision(&rel).unwrap(), 1.0 / k as f64);
            }
        }
    }

    #[test]
    fn macro_average_skips_degenerate_classes() {
        let scores = vec![vec![0.9, 0.1], vec![0.2, 0.4], vec![0.8, 0.6]];
        let labels = vec![vec![true, true], vec![false, true], vec![true, true]];
        let report = auc_roc_class_balanced(&scores, &labels).unwrap();
        assert_eq!(report.skipped_classes, vec![1]);
        assert_eq!(report.per_class[1], None);
        assert_eq!(report.macro_auc, report.per_class[0].unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn auc_matches_pairwise_oracle_exactly(
            raw in prop::collection::vec((0u8..12, prop::bool::ANY), 2..200)
        ) {
            // coarse scores force plenty of ties
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assert_eq!(auc_binary(&scores, &labels), auc_pairwise_oracle(&scores, &labels));
        }

        #[test]
        fn auc_is_invariant_under_monotone_transforms(
            raw in prop::collection::vec((0u8..30, prop::bool::ANY), 2..120)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let base = auc_binary(&scores, &labels).unwrap();
            let squashed: Vec<f64> = scores.iter().map(|&s| (s / 7.0).exp() + 3.0).collect();
            prop_assert_eq!(auc_binary(&squashed, &labels).unwrap(), base);
        }

        #[test]
        fn ap_matches_rank_oracle_exactly(rel in prop::collection::vec(prop::bool::ANY, 1..200)) {
            prop_assume!(rel.iter().any(|&r| r));
            prop_assert_eq!(average_precision(&rel).unwrap(), ap_oracle(&rel).unwrap());
        }
    }
}
