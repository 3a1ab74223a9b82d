//! Accuracy, fairness gaps, ROC-AUC and the clustering probe for latent
//! sensitive information.

mod auc;
mod fairness;
mod gmm;
mod report;

pub use auc::roc_auc;
pub use fairness::{accuracy, delta_dp, delta_eo, positive_scores, ScoreMode};
pub use gmm::{gmm_fit, GmmModel, GMM_MAX_ITER, GMM_TOL, VARIANCE_FLOOR};
pub use report::{FairnessReport, RunMetadata};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clusters `latents` into two Gaussian components and scores how well the
/// responsibility of component 1 ranks the true groups. The result is
/// folded to `max(auc, 1 - auc)` because cluster labels are arbitrary.
pub fn estimation_auc(latents: &Tensor, s_true: &[u8], seed: u64) -> Result<f64> {
    if latents.rows() != s_true.len() {
        return Err(Error::dim("estimation_auc", latents.shape(), (s_true.len(), 1)));
    }
    if !s_true.contains(&0) || !s_true.contains(&1) {
        return Err(Error::Metric("estimation_auc: s has a single class".into()));
    }
    let model = gmm_fit(latents, 2, seed)?;
    let resp = model.responsibilities(latents)?;
    let scores = resp.col_values(1);
    let auc = roc_auc(&scores, s_true)?;
    Ok(auc.max(1.0 - auc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn perfect_separation_scores_one() {
        let s: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
        let a = Tensor::column(&s.iter().map(|&v| v as f64).collect::<Vec<_>>());
        assert_eq!(estimation_auc(&a, &s, 0).unwrap(), 1.0);
    }

    #[test]
    fn independent_noise_near_half() {
        let mut r = rng::seeded(17);
        let a = Tensor::randn(5000, 2, &mut r);
        let s: Vec<u8> = (0..5000).map(|i| ((i * 7919) % 3 == 0) as u8).collect();
        let auc = estimation_auc(&a, &s, 1).unwrap();
        assert!((0.5..0.55).contains(&auc), "auc = {auc}");
    }

    #[test]
    fn single_class_rejected() {
        let a = Tensor::column(&[0.0, 1.0, 2.0]);
        assert!(matches!(estimation_auc(&a, &[1, 1, 1], 0), Err(Error::Metric(_))));
    }
}
