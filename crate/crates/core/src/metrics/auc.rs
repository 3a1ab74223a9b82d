use crate::error::{Error, Result};

/// ROC-AUC via the Mann-Whitney rank statistic. Tied scores share their
/// mean rank, so ties count as half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("roc_auc", (scores.len(), 1), (labels.len(), 1)));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("roc_auc: non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("roc_auc: undefined with a single class".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie block i..=j shares their mean
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                pos_rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pairwise-count oracle: P(score_pos > score_neg) + 0.5 P(tie).
    fn brute(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfect_and_inverted() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[0.5; 4], &[0, 1, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    proptest! {
        #[test]
        fn matches_pairwise_oracle(
            pairs in prop::collection::vec((0u8..6, 0u8..2), 2..40)
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let got = roc_auc(&scores, &labels).unwrap();
            prop_assert!((got - brute(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_monotone_transform(
            pairs in prop::collection::vec((-5.0f64..5.0, 0u8..2), 2..40)
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let warped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
            let a = roc_auc(&scores, &labels).unwrap();
            let b = roc_auc(&warped, &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
