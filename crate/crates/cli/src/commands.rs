//! Subcommands: run the stages and write artifacts into `cfg.out`.

use std::path::{Path, PathBuf};

use fairlatent::classifier::FairClassifier;
use fairlatent::estimator::EstimatorModel;
use fairlatent::metrics::FairnessReport;
use fairlatent::model_io::{read_model, write_model};
use fairlatent::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{DataKind, RunConfig};
use crate::error::{AtStage, Stage};
use crate::experiments::{ablate, ablation_csv, sweep, sweep_csv, AblateMode, AblationRow, SweepParam, SweepRow};
use crate::run::{
    evaluate, extract_latents, fit_estimator, latent_auc, load_dataset, prepare, raw_relevant_auc, run_pipeline_on,
    train_method, Latents, Prepared, StageResult,
};

pub const ESTIMATOR_FILE: &str = "estimator.fmdl";
pub const CLASSIFIER_FILE: &str = "classifier.fmdl";
pub const REPORT_STEM: &str = "report";

fn start(cfg: &RunConfig) -> StageResult<()> {
    cfg.validate().at(Stage::Config)?;
    cfg.prepare_out_dir().at(Stage::Config)?;
    write_text(&cfg.out.join("config.toml"), &cfg.to_toml_string())
}

fn write_text(path: &Path, text: &str) -> StageResult<()> {
    std::fs::write(path, text)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
        .at(Stage::Write)
}

fn write_json(path: &Path, value: &impl Serialize) -> StageResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    write_text(path, &text)
}

fn run_info(cfg: &RunConfig, dataset_hash: &str) -> Value {
    json!({
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "dataset_hash": dataset_hash,
        "method": cfg.method_name(),
    })
}

fn log_doc(cfg: &RunConfig, epochs: &impl Serialize) -> Value {
    json!({ "seed": cfg.seed, "config_hash": cfg.hash(), "epochs": epochs })
}

/// Reads a model and checks it was trained on the same dataset.
fn read_checked(path: &Path, stage: Stage, data: &Prepared) -> StageResult<fairlatent::model_io::ModelFile> {
    let file = read_model(path).at(stage)?;
    let trained_on = file.metadata["run"]["dataset_hash"].as_str().unwrap_or_default();
    if trained_on != data.dataset_hash {
        return Err(Error::Format(format!(
            "{} was trained on dataset {trained_on}, current dataset is {}",
            path.display(),
            data.dataset_hash
        )))
        .at(stage);
    }
    Ok(file)
}

/// Writes the synthetic dataset as CSV and returns its path.
pub fn cmd_synth(cfg: &RunConfig) -> StageResult<PathBuf> {
    if cfg.data.source != DataKind::Synth {
        return Err(Error::Config("synth needs data.source = \"synth\"".into())).at(Stage::Config);
    }
    start(cfg)?;
    let data = load_dataset(cfg)?;
    let path = cfg.out.join("synthetic.csv");
    data.write_csv(&path).at(Stage::Write)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationSummary {
    pub estimation_auc: Option<f64>,
    pub raw_relevant_auc: Option<f64>,
    pub final_loss: f64,
    pub seed: u64,
    pub config_hash: String,
    pub dataset_hash: String,
}

/// Trains the estimator; writes the model, its loss log and the GMM AUCs of
/// the latents and of the raw relevant features.
pub fn cmd_estimate(cfg: &RunConfig) -> StageResult<EstimationSummary> {
    start(cfg)?;
    let data = prepare(cfg)?;
    let est = fit_estimator(cfg, &data)?;
    let lat = extract_latents(cfg, &est.model, &data)?;
    write_model(
        cfg.out.join(ESTIMATOR_FILE),
        &est.model.to_model_file(run_info(cfg, &data.dataset_hash)),
    )
    .at(Stage::Write)?;
    write_json(&cfg.out.join("estimator_log.json"), &log_doc(cfg, &est.log))?;
    let has_s = data.test.sensitive().is_some();
    let summary = EstimationSummary {
        estimation_auc: if has_s { Some(latent_auc(cfg, &data, &lat.test)?) } else { None },
        raw_relevant_auc: if has_s { Some(raw_relevant_auc(cfg, &data)?) } else { None },
        final_loss: est.log.last().map_or(f64::NAN, |e| e.loss),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        dataset_hash: data.dataset_hash.clone(),
    };
    write_json(&cfg.out.join("estimation.json"), &summary)?;
    Ok(summary)
}

fn stored_latents(cfg: &RunConfig, data: &Prepared) -> StageResult<Option<Latents>> {
    if !cfg.method.uses_estimator() {
        return Ok(None);
    }
    let file = read_checked(&cfg.out.join(ESTIMATOR_FILE), Stage::Latents, data)?;
    let model = EstimatorModel::from_model_file(file).at(Stage::Latents)?;
    Ok(Some(extract_latents(cfg, &model, data)?))
}

/// Trains the classifier, reading latents from a previous `estimate` in the
/// same output directory when the method needs them.
pub fn cmd_train(cfg: &RunConfig) -> StageResult<FairClassifier> {
    start(cfg)?;
    let data = prepare(cfg)?;
    let latents = stored_latents(cfg, &data)?;
    let trained = train_method(cfg, cfg.method, cfg.classifier.lambda, &data, latents.as_ref())?;
    write_model(
        cfg.out.join(CLASSIFIER_FILE),
        &trained.classifier.to_model_file(run_info(cfg, &data.dataset_hash)),
    )
    .at(Stage::Write)?;
    write_json(&cfg.out.join("classifier_log.json"), &log_doc(cfg, &trained.log))?;
    Ok(trained.classifier)
}

/// Evaluates stored models on the test part and writes the report.
pub fn cmd_evaluate(cfg: &RunConfig) -> StageResult<FairnessReport> {
    start(cfg)?;
    let data = prepare(cfg)?;
    let latents = stored_latents(cfg, &data)?;
    let file = read_checked(&cfg.out.join(CLASSIFIER_FILE), Stage::Evaluate, &data)?;
    let classifier = FairClassifier::from_model_file(file).at(Stage::Evaluate)?;
    let lambda = classifier.lambda;
    let report = evaluate(cfg, lambda, &classifier, &data, latents.as_ref().map(|l| &l.test))?;
    report.write(&cfg.out, REPORT_STEM).at(Stage::Write)?;
    Ok(report)
}

/// Full pipeline; writes the report, both models and the loss logs.
pub fn cmd_pipeline(cfg: &RunConfig) -> StageResult<FairnessReport> {
    start(cfg)?;
    let data = prepare(cfg)?;
    let outcome = run_pipeline_on(cfg, &data)?;
    let run = run_info(cfg, &outcome.dataset_hash);
    if let Some(est) = &outcome.estimator {
        write_model(cfg.out.join(ESTIMATOR_FILE), &est.model.to_model_file(run.clone())).at(Stage::Write)?;
        write_json(&cfg.out.join("estimator_log.json"), &log_doc(cfg, &est.log))?;
    }
    write_model(
        cfg.out.join(CLASSIFIER_FILE),
        &outcome.classifier.classifier.to_model_file(run),
    )
    .at(Stage::Write)?;
    write_json(&cfg.out.join("classifier_log.json"), &log_doc(cfg, &outcome.classifier.log))?;
    outcome.report.write(&cfg.out, REPORT_STEM).at(Stage::Write)?;
    Ok(outcome.report)
}

/// Runs a sweep and writes `sweep_<param>.csv`. Without an explicit grid
/// the config's grid is used.
pub fn cmd_sweep(cfg: &RunConfig, param: SweepParam, grid: Option<&[f64]>) -> StageResult<Vec<SweepRow>> {
    let grid = grid.unwrap_or(match param {
        SweepParam::Lambda => &cfg.sweep.lambda_grid,
        SweepParam::Beta => &cfg.sweep.beta_grid,
    });
    crate::experiments::check_grid(param, grid).at(Stage::Sweep)?;
    start(cfg)?;
    let rows = sweep(cfg, param, grid)?;
    let csv = sweep_csv(param, &rows, cfg.seed, &cfg.hash());
    write_text(&cfg.out.join(format!("sweep_{}.csv", param.name())), &csv)?;
    Ok(rows)
}

/// Runs the relevant-feature ablations and writes `ablation.csv`.
pub fn cmd_ablate(cfg: &RunConfig, modes: &[AblateMode]) -> StageResult<Vec<AblationRow>> {
    start(cfg)?;
    let rows = ablate(cfg, modes)?;
    write_text(&cfg.out.join("ablation.csv"), &ablation_csv(&rows, cfg.seed, &cfg.hash()))?;
    Ok(rows)
}
