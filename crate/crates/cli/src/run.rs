//! Pipeline stages as plain functions. Nothing here writes files.

use fairlatent::classifier::{
    train_baseline, train_fair, FairClassifier, OracleSensitive, TrainedClassifier, Validation,
};
use fairlatent::data::{load_csv, split, synthesize, Dataset};
use fairlatent::estimator::{estimate_latents, train_estimator, EstimatorEpoch, EstimatorModel};
use fairlatent::metrics::{
    accuracy, delta_dp, delta_eo, estimation_auc, positive_scores, FairnessReport, RunMetadata, ScoreMode,
};
use fairlatent::mine::MineDiscriminator;
use fairlatent::{rng, Error, Tensor};

use crate::config::{DataKind, Method, RunConfig};
use crate::error::{AtStage, Stage, StageError};

pub type StageResult<T> = Result<T, StageError>;

/// Train/validation/test parts, standardized on train.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub dataset_hash: String,
}

#[derive(Debug, Clone)]
pub struct Latents {
    pub train: Tensor,
    pub validation: Tensor,
    pub test: Tensor,
}

#[derive(Debug, Clone)]
pub struct EstimatorRun {
    pub model: EstimatorModel,
    pub log: Vec<EstimatorEpoch>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: FairnessReport,
    pub estimator: Option<EstimatorRun>,
    pub latents: Option<Latents>,
    pub classifier: TrainedClassifier,
    pub dataset_hash: String,
}

pub fn load_dataset(cfg: &RunConfig) -> StageResult<Dataset> {
    match cfg.data.source {
        DataKind::Synth => synthesize(&cfg.data.synth).at(Stage::Load),
        DataKind::Csv => {
            let path = cfg
                .data
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("data.path is required for csv data".into()))
                .at(Stage::Config)?;
            load_csv(path, &cfg.data.roles).at(Stage::Load)
        }
    }
}

pub fn dataset_hash(data: &Dataset) -> String {
    format!("{:016x}", data.content_hash())
}

pub fn prepare_dataset(cfg: &RunConfig, data: &Dataset) -> StageResult<Prepared> {
    let (train, validation, test) = split(data, &cfg.split_spec()).at(Stage::Split)?;
    Ok(Prepared {
        train,
        validation,
        test,
        dataset_hash: dataset_hash(data),
    })
}

pub fn prepare(cfg: &RunConfig) -> StageResult<Prepared> {
    prepare_dataset(cfg, &load_dataset(cfg)?)
}

/// Trains the estimator on the training part, with the MI penalty when
/// `estimator.mi` is on.
pub fn fit_estimator(cfg: &RunConfig, data: &Prepared) -> StageResult<EstimatorRun> {
    let view = data.train.train_view();
    let mut r = rng::derive(cfg.seed, 40);
    let mut model =
        EstimatorModel::init(cfg.estimator_config(), view.xz.cols(), view.xr.cols(), view.classes, &mut r)
            .at(Stage::Estimate)?;
    let training = cfg.estimator_training();
    let log = if cfg.estimator.mi {
        let mut disc = MineDiscriminator::new(model.config.d_a, model.config.d_z, cfg.mine_config())
            .at(Stage::Estimate)?;
        train_estimator(&mut model, &view, &training, Some(&mut disc))
    } else {
        train_estimator(&mut model, &view, &training, None)
    }
    .at(Stage::Estimate)?;
    Ok(EstimatorRun { model, log })
}

pub fn extract_latents(cfg: &RunConfig, model: &EstimatorModel, data: &Prepared) -> StageResult<Latents> {
    let one = |d: &Dataset| -> StageResult<Tensor> {
        Ok(estimate_latents(model, &d.train_view(), cfg.latents, cfg.seed).at(Stage::Latents)?.0)
    };
    Ok(Latents {
        train: one(&data.train)?,
        validation: one(&data.validation)?,
        test: one(&data.test)?,
    })
}

/// Trains the configured method's classifier at the given λ. FairWS needs
/// latents; the oracle baseline reads the sensitive column of train and
/// validation.
pub fn train_method(
    cfg: &RunConfig,
    method: Method,
    lambda: f64,
    data: &Prepared,
    latents: Option<&Latents>,
) -> StageResult<TrainedClassifier> {
    crate::config::check_lambda(lambda).at(Stage::Config)?;
    let ccfg = cfg.classifier_config();
    let train = data.train.train_view();
    let validation = data.validation.train_view();
    match method.baseline() {
        None => {
            let lat = latents
                .ok_or_else(|| Error::Config("fair_ws needs estimated latents".into()))
                .at(Stage::Train)?;
            let c = FairClassifier::init(train.xz.cols(), train.xr.cols(), train.classes, lambda, &ccfg)
                .at(Stage::Train)?;
            let val = Validation {
                view: validation,
                target: Some(&lat.validation),
            };
            train_fair(c, &train, Some(&lat.train), Some(val), &ccfg).at(Stage::Train)
        }
        Some(kind) => {
            let oracle = data.train.sensitive().map(|s| OracleSensitive {
                train: s,
                validation: data.validation.sensitive(),
            });
            train_baseline(kind, &train, Some(&validation), oracle, lambda, &ccfg).at(Stage::Train)
        }
    }
}

/// Accuracy, ΔEO and ΔDP on the test part, plus the GMM AUC of the test
/// latents when given.
pub fn evaluate(
    cfg: &RunConfig,
    lambda: f64,
    classifier: &FairClassifier,
    data: &Prepared,
    test_latents: Option<&Tensor>,
) -> StageResult<FairnessReport> {
    let test = &data.test;
    let s = test
        .sensitive()
        .ok_or_else(|| Error::Metric("evaluation needs the sensitive column on the test part".into()))
        .at(Stage::Evaluate)?;
    let probs = classifier.predict(test.xz(), test.xr()).at(Stage::Evaluate)?;
    let scores = positive_scores(&probs, ScoreMode::Probability).at(Stage::Evaluate)?;
    let report = FairnessReport {
        accuracy: accuracy(&probs, test.labels()).at(Stage::Evaluate)?,
        delta_eo: delta_eo(&scores, s, test.labels()).at(Stage::Evaluate)?,
        delta_dp: delta_dp(&scores, s).at(Stage::Evaluate)?,
        estimation_auc: test_latents
            .map(|a| estimation_auc(a, s, cfg.seed))
            .transpose()
            .at(Stage::Evaluate)?,
        metadata: RunMetadata {
            method: cfg.method_name(),
            seed: cfg.seed,
            lambda,
            beta: cfg.estimator.beta,
            dataset_hash: data.dataset_hash.clone(),
            config_hash: cfg.hash(),
        },
    };
    report.validate().at(Stage::Evaluate)?;
    Ok(report)
}

/// Load, split, estimate (FairWS only), train, evaluate.
pub fn run_pipeline(cfg: &RunConfig) -> StageResult<PipelineOutcome> {
    cfg.validate().at(Stage::Config)?;
    let data = prepare(cfg)?;
    run_pipeline_on(cfg, &data)
}

pub fn run_pipeline_on(cfg: &RunConfig, data: &Prepared) -> StageResult<PipelineOutcome> {
    let (estimator, latents) = if cfg.method.uses_estimator() {
        let est = fit_estimator(cfg, data)?;
        let lat = extract_latents(cfg, &est.model, data)?;
        (Some(est), Some(lat))
    } else {
        (None, None)
    };
    let lambda = cfg.classifier.lambda;
    let classifier = train_method(cfg, cfg.method, lambda, data, latents.as_ref())?;
    let report = evaluate(cfg, lambda, &classifier.classifier, data, latents.as_ref().map(|l| &l.test))?;
    Ok(PipelineOutcome {
        report,
        estimator,
        latents,
        classifier,
        dataset_hash: data.dataset_hash.clone(),
    })
}

/// GMM AUC of the raw relevant features on the test part.
pub fn raw_relevant_auc(cfg: &RunConfig, data: &Prepared) -> StageResult<f64> {
    let s = data
        .test
        .sensitive()
        .ok_or_else(|| Error::Metric("estimation AUC needs the sensitive column".into()))
        .at(Stage::Evaluate)?;
    estimation_auc(data.test.xr(), s, cfg.seed).at(Stage::Evaluate)
}

/// GMM AUC of the given test latents.
pub fn latent_auc(cfg: &RunConfig, data: &Prepared, test_latents: &Tensor) -> StageResult<f64> {
    let s = data
        .test
        .sensitive()
        .ok_or_else(|| Error::Metric("estimation AUC needs the sensitive column".into()))
        .at(Stage::Evaluate)?;
    estimation_auc(test_latents, s, cfg.seed).at(Stage::Evaluate)
}

/// Validation accuracy of a trained classifier.
pub fn validation_accuracy(classifier: &FairClassifier, data: &Prepared) -> StageResult<f64> {
    let v = &data.validation;
    let probs = classifier.predict(v.xz(), v.xr()).at(Stage::Evaluate)?;
    accuracy(&probs, v.labels()).at(Stage::Evaluate)
}

#[derive(Debug, Clone)]
pub struct TunedLambda {
    pub lambda: f64,
    pub classifier: TrainedClassifier,
    pub validation_accuracy: f64,
    pub reference_accuracy: f64,
}

/// Largest λ on `grid` whose validation accuracy is within `max_drop` of the
/// unregularized model's. Uses labels only, never the sensitive column
/// (except through the oracle baseline's own penalty).
pub fn tune_lambda(
    cfg: &RunConfig,
    method: Method,
    data: &Prepared,
    latents: Option<&Latents>,
    grid: &[f64],
    max_drop: f64,
) -> StageResult<TunedLambda> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into())).at(Stage::Config);
    }
    let reference = train_method(cfg, Method::Vanilla, 0.0, data, None)?;
    let reference_accuracy = validation_accuracy(&reference.classifier, data)?;
    let mut best = TunedLambda {
        lambda: 0.0,
        validation_accuracy: reference_accuracy,
        reference_accuracy,
        classifier: reference,
    };
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    for lambda in sorted {
        let trained = train_method(cfg, method, lambda, data, latents)?;
        let acc = validation_accuracy(&trained.classifier, data)?;
        if reference_accuracy - acc <= max_drop && lambda >= best.lambda {
            best = TunedLambda {
                lambda,
                validation_accuracy: acc,
                reference_accuracy,
                classifier: trained,
            };
        }
    }
    Ok(best)
}
