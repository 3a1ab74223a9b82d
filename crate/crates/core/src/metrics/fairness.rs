use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How per-sample scores feed the fairness gaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Predicted probability of the positive class.
    #[default]
    Probability,
    /// 1 if that probability is at least 0.5, else 0.
    Threshold,
}

/// Positive-class (index 1) scores from an `n x m` probability matrix.
pub fn positive_scores(probs: &Tensor, mode: ScoreMode) -> Result<Vec<f64>> {
    if probs.cols() < 2 {
        return Err(Error::Metric(format!(
            "need at least 2 probability columns, got {}",
            probs.cols()
        )));
    }
    let p = probs.col_values(1);
    Ok(match mode {
        ScoreMode::Probability => p,
        ScoreMode::Threshold => p.into_iter().map(|v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(),
    })
}

fn group_means<'a>(pairs: impl Iterator<Item = (f64, u8)> + 'a) -> [(f64, usize); 2] {
    let mut acc = [(0.0, 0usize); 2];
    for (score, g) in pairs {
        let slot = &mut acc[usize::from(g == 1)];
        slot.0 += score;
        slot.1 += 1;
    }
    acc
}

/// `|E[score | s=1] - E[score | s=0]|`.
pub fn delta_dp(scores: &[f64], s: &[u8]) -> Result<f64> {
    if scores.len() != s.len() {
        return Err(Error::dim("delta_dp", (scores.len(), 1), (s.len(), 1)));
    }
    let [g0, g1] = group_means(scores.iter().copied().zip(s.iter().copied()));
    if g0.1 == 0 || g1.1 == 0 {
        return Err(Error::Metric("undefined: empty protected group".into()));
    }
    Ok((g1.0 / g1.1 as f64 - g0.0 / g0.1 as f64).abs())
}

/// `|E[score | s=1, y=1] - E[score | s=0, y=1]|`.
pub fn delta_eo(scores: &[f64], s: &[u8], y: &[usize]) -> Result<f64> {
    if scores.len() != s.len() || scores.len() != y.len() {
        return Err(Error::dim("delta_eo", (scores.len(), 1), (s.len(), y.len())));
    }
    let positives = scores
        .iter()
        .zip(s)
        .zip(y)
        .filter(|(_, &yi)| yi == 1)
        .map(|((&sc, &g), _)| (sc, g));
    let [g0, g1] = group_means(positives);
    for (g, (_, count)) in [g0, g1].iter().enumerate() {
        if *count == 0 {
            return Err(Error::Metric(format!("undefined: group s={g} has no positive samples")));
        }
    }
    Ok((g1.0 / g1.1 as f64 - g0.0 / g0.1 as f64).abs())
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(probs: &Tensor, y: &[usize]) -> Result<f64> {
    if probs.rows() != y.len() {
        return Err(Error::dim("accuracy", probs.shape(), (y.len(), 1)));
    }
    if y.is_empty() {
        return Err(Error::Metric("accuracy of an empty set".into()));
    }
    let hits = probs.argmax_rows().iter().zip(y).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / y.len() as f64)
}
