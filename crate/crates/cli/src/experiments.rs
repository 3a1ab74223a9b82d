//! λ/β sweeps and relevant-feature ablations.

use std::fmt::Write as _;
use std::str::FromStr;

use fairlatent::data::Dataset;
use fairlatent::{rng, Error};
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::config::{check_lambda, RunConfig};
use crate::error::{AtStage, Stage};
use crate::run::{
    evaluate, extract_latents, fit_estimator, latent_auc, load_dataset, prepare, prepare_dataset, raw_relevant_auc,
    train_method, StageResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Beta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lambda => "lambda",
            Self::Beta => "beta",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "beta" => Ok(Self::Beta),
            other => Err(Error::Config(format!("unknown sweep parameter '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub accuracy: f64,
    pub delta_eo: f64,
    pub delta_dp: f64,
    pub estimation_auc: Option<f64>,
}

pub fn check_grid(param: SweepParam, grid: &[f64]) -> fairlatent::Result<()> {
    if grid.is_empty() {
        return Err(Error::Config(format!("{} grid is empty", param.name())));
    }
    for &v in grid {
        match param {
            SweepParam::Lambda => check_lambda(v)?,
            SweepParam::Beta if !(v > 0.0) || !v.is_finite() => {
                return Err(Error::Config(format!("beta grid values must be > 0, got {v}")))
            }
            SweepParam::Beta => {}
        }
    }
    Ok(())
}

/// One row per grid point, all with the config's seed. For λ the estimator
/// is trained once and only the classifier is retrained; for β both are.
pub fn sweep(cfg: &RunConfig, param: SweepParam, grid: &[f64]) -> StageResult<Vec<SweepRow>> {
    check_grid(param, grid).at(Stage::Sweep)?;
    cfg.validate().at(Stage::Config)?;
    if param == SweepParam::Beta && !cfg.method.uses_estimator() {
        return Err(Error::Config("a beta sweep needs method = \"fair_ws\"".into())).at(Stage::Sweep);
    }
    let data = prepare(cfg)?;
    let mut rows = Vec::with_capacity(grid.len());
    match param {
        SweepParam::Lambda => {
            let latents = if cfg.method.uses_estimator() {
                let est = fit_estimator(cfg, &data)?;
                Some(extract_latents(cfg, &est.model, &data)?)
            } else {
                None
            };
            for &lambda in grid {
                let mut point = cfg.clone();
                point.classifier.lambda = lambda;
                let trained = train_method(&point, point.method, lambda, &data, latents.as_ref())?;
                let r = evaluate(&point, lambda, &trained.classifier, &data, latents.as_ref().map(|l| &l.test))?;
                rows.push(SweepRow {
                    value: lambda,
                    accuracy: r.accuracy,
                    delta_eo: r.delta_eo,
                    delta_dp: r.delta_dp,
                    estimation_auc: r.estimation_auc,
                });
            }
        }
        SweepParam::Beta => {
            for &beta in grid {
                let mut point = cfg.clone();
                point.estimator.beta = beta;
                let est = fit_estimator(&point, &data)?;
                let latents = extract_latents(&point, &est.model, &data)?;
                let lambda = point.classifier.lambda;
                let trained = train_method(&point, point.method, lambda, &data, Some(&latents))?;
                let r = evaluate(&point, lambda, &trained.classifier, &data, Some(&latents.test))?;
                rows.push(SweepRow {
                    value: beta,
                    accuracy: r.accuracy,
                    delta_eo: r.delta_eo,
                    delta_dp: r.delta_dp,
                    estimation_auc: r.estimation_auc,
                });
            }
        }
    }
    Ok(rows)
}

/// Plot-ready CSV. Every row carries the seed and config hash.
pub fn sweep_csv(param: SweepParam, rows: &[SweepRow], seed: u64, config_hash: &str) -> String {
    let mut out = format!("{},accuracy,delta_eo,delta_dp,estimation_auc,seed,config_hash\n", param.name());
    for r in rows {
        let auc = r.estimation_auc.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.value, r.accuracy, r.delta_eo, r.delta_dp, auc, seed, config_hash
        );
    }
    out
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblateMode {
    /// Random feature subset of the configured size.
    Random,
    /// Best single configured relevant feature.
    Top1,
    /// One configured relevant feature swapped for an irrelevant one.
    Noisy,
    /// GMM on the raw relevant features, no estimator.
    Gm,
}

impl AblateMode {
    pub const ALL: [AblateMode; 4] = [Self::Random, Self::Top1, Self::Noisy, Self::Gm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Top1 => "top1",
            Self::Noisy => "noisy",
            Self::Gm => "gm",
        }
    }
}

impl FromStr for AblateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "random" => Ok(Self::Random),
            "top1" => Ok(Self::Top1),
            "noisy" => Ok(Self::Noisy),
            "gm" => Ok(Self::Gm),
            other => Err(Error::Config(format!("unknown ablation mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `fair_ws` for the configured roles, else the mode name.
    pub mode: String,
    pub relevant: Vec<String>,
    pub estimation_auc: f64,
}

fn estimated_auc(cfg: &RunConfig, data: &Dataset, relevant: &[String]) -> StageResult<f64> {
    let ds = data.with_relevant_sources(relevant).at(Stage::Ablate)?;
    let prepared = prepare_dataset(cfg, &ds)?;
    let est = fit_estimator(cfg, &prepared)?;
    let lat = extract_latents(cfg, &est.model, &prepared)?;
    latent_auc(cfg, &prepared, &lat.test)
}

/// Estimation AUC for the configured relevant features, then for each mode.
pub fn ablate(cfg: &RunConfig, modes: &[AblateMode]) -> StageResult<Vec<AblationRow>> {
    cfg.validate().at(Stage::Config)?;
    let data = load_dataset(cfg)?;
    let relevant = data.relevant_sources();
    let irrelevant = data.irrelevant_sources();
    if relevant.len() < 3 {
        return Err(Error::Config(format!(
            "ablation needs at least 3 relevant features, got {}",
            relevant.len()
        )))
        .at(Stage::Ablate);
    }
    if irrelevant.is_empty() && modes.iter().any(|m| matches!(m, AblateMode::Noisy | AblateMode::Random)) {
        return Err(Error::Config("random and noisy ablations need irrelevant features".into())).at(Stage::Ablate);
    }
    let mut rows = vec![AblationRow {
        mode: "fair_ws".into(),
        relevant: relevant.clone(),
        estimation_auc: estimated_auc(cfg, &data, &relevant)?,
    }];
    let mut r = rng::derive(cfg.seed, 50);
    for &mode in modes {
        let row = match mode {
            AblateMode::Random => {
                let all = data.feature_sources();
                let picked: Vec<String> = all.choose_multiple(&mut r, relevant.len()).cloned().collect();
                let picked = in_order(&all, &picked);
                AblationRow {
                    mode: mode.name().into(),
                    estimation_auc: estimated_auc(cfg, &data, &picked)?,
                    relevant: picked,
                }
            }
            AblateMode::Top1 => {
                let mut best: Option<(String, f64)> = None;
                for f in &relevant {
                    let auc = estimated_auc(cfg, &data, std::slice::from_ref(f))?;
                    if best.as_ref().is_none_or(|(_, b)| auc > *b) {
                        best = Some((f.clone(), auc));
                    }
                }
                let (f, auc) = best.expect("at least 3 relevant features");
                AblationRow {
                    mode: mode.name().into(),
                    relevant: vec![f],
                    estimation_auc: auc,
                }
            }
            AblateMode::Noisy => {
                let mut swapped = relevant.clone();
                let slot = rand::Rng::random_range(&mut r, 0..swapped.len());
                swapped[slot] = irrelevant.choose(&mut r).expect("checked non-empty").clone();
                let swapped = in_order(&data.feature_sources(), &swapped);
                AblationRow {
                    mode: mode.name().into(),
                    estimation_auc: estimated_auc(cfg, &data, &swapped)?,
                    relevant: swapped,
                }
            }
            AblateMode::Gm => {
                let prepared = prepare_dataset(cfg, &data)?;
                AblationRow {
                    mode: mode.name().into(),
                    relevant: relevant.clone(),
                    estimation_auc: raw_relevant_auc(cfg, &prepared)?,
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

fn in_order(all: &[String], picked: &[String]) -> Vec<String> {
    all.iter().filter(|f| picked.contains(f)).cloned().collect()
}

pub fn ablation_csv(rows: &[AblationRow], seed: u64, config_hash: &str) -> String {
    let mut out = String::from("mode,relevant,estimation_auc,seed,config_hash\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.mode,
            r.relevant.join(";"),
            r.estimation_auc,
            seed,
            config_hash
        );
    }
    out
}
