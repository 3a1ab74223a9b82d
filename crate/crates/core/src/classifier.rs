//! Downstream classifier `y' = g(xz ⊕ f(xr))` trained on cross-entropy plus
//! `λ` times the absolute-covariance penalty against a fixed target matrix,
//! and the baselines that reuse the same trainer.

use serde::{Deserialize, Serialize};

use crate::data::TrainView;
use crate::error::{Error, Result};
use crate::estimator::minibatches;
use crate::nn::{collect_grads, Activation, BoundMlp, Mlp, MlpSpec, OutputActivation};
use crate::optim::{AdamConfig, AdamState};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Where the penalty's sums run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegScope {
    /// Over each minibatch, with minibatch means.
    #[default]
    Batch,
    /// Over the whole training set at every step.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    #[default]
    Identity,
    Mlp,
    /// `g` sees only `xz`.
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RelevantTransform {
    Identity,
    Mlp(Mlp),
    Drop,
}

impl RelevantTransform {
    pub fn kind(&self) -> TransformKind {
        match self {
            Self::Identity => TransformKind::Identity,
            Self::Mlp(_) => TransformKind::Mlp,
            Self::Drop => TransformKind::Drop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub transform: TransformKind,
    /// Output width of the `xr` transform when it is an MLP.
    pub transform_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub reg_scope: RegScope,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            hidden_layers: 1,
            transform: TransformKind::Identity,
            transform_width: 4,
            epochs: 300,
            batch_size: 256,
            lr: 1e-3,
            patience: 30,
            reg_scope: RegScope::Batch,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 || self.batch_size < 2 || self.transform_width == 0 {
            return Err(Error::Config(
                "classifier hidden, epochs, transform width must be >= 1 and batch size >= 2".into(),
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("classifier lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairClassifier {
    pub g: Mlp,
    pub f: RelevantTransform,
    pub lambda: f64,
}

struct BoundClassifier {
    g: BoundMlp,
    f: Option<BoundMlp>,
}

impl BoundClassifier {
    fn vars(&self) -> Vec<Var> {
        let mut v = self.g.vars();
        if let Some(f) = &self.f {
            v.extend(f.vars());
        }
        v
    }
}

/// `sum_{k,j} | sum_i (y'_ij - mean_j y') (a_ik - mean_k a) |` on the tape.
/// `a` is a constant; only `y'` carries gradient.
fn reg_graph(tape: &mut Tape, yprime: Var, a: &Tensor) -> Result<Var> {
    let n = tape.value(yprime).rows();
    if a.rows() != n {
        return Err(Error::dim("correlation_reg", tape.value(yprime).shape(), a.shape()));
    }
    if n < 2 {
        return Err(Error::Contract(format!("correlation_reg needs n >= 2, got {n}")));
    }
    let means = a.col_means();
    let mut centered = a.clone();
    for i in 0..n {
        for (v, m) in centered.row_mut(i).iter_mut().zip(means.data()) {
            *v -= m;
        }
    }
    let yp_mean = tape.mean_rows(yprime)?;
    let yc = tape.sub_row(yprime, yp_mean)?;
    let act = tape.constant(centered.transpose());
    let cross = tape.matmul(act, yc)?;
    let abs = tape.abs(cross)?;
    tape.sum(abs)
}

/// Value of the penalty for fixed predictions.
pub fn correlation_reg(yprime: &Tensor, a: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let y = tape.constant(yprime.clone());
    let r = reg_graph(&mut tape, y, a)?;
    Ok(tape.value(r).get(0, 0))
}

/// Mean cross-entropy of log-probabilities against one-hot labels.
fn cross_entropy_graph(tape: &mut Tape, logits: Var, y_onehot: &Tensor) -> Result<Var> {
    let logp = tape.log_softmax(logits)?;
    let yh = tape.constant(y_onehot.clone());
    let picked = tape.mul(logp, yh)?;
    let per_row = tape.sum_cols(picked)?;
    let mean = tape.mean(per_row)?;
    tape.scale(mean, -1.0)
}

/// Loss pieces of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassifierLoss {
    pub total: f64,
    pub clf: f64,
    pub reg: f64,
}

impl FairClassifier {
    pub fn init(d_z: usize, d_r: usize, classes: usize, lambda: f64, cfg: &ClassifierConfig) -> Result<Self> {
        cfg.validate()?;
        check_lambda(lambda)?;
        let mut r = rng::derive(cfg.seed, 31);
        let f = match cfg.transform {
            TransformKind::Identity => RelevantTransform::Identity,
            TransformKind::Drop => RelevantTransform::Drop,
            TransformKind::Mlp => RelevantTransform::Mlp(Mlp::init(
                MlpSpec::new(
                    vec![d_r, cfg.hidden, cfg.transform_width],
                    Activation::Relu,
                    OutputActivation::Identity,
                )?,
                &mut r,
            )?),
        };
        let f_width = match &f {
            RelevantTransform::Identity => d_r,
            RelevantTransform::Mlp(m) => m.spec.output_width(),
            RelevantTransform::Drop => 0,
        };
        let mut widths = vec![d_z + f_width];
        widths.extend(std::iter::repeat_n(cfg.hidden, cfg.hidden_layers));
        widths.push(classes);
        let g = Mlp::init(MlpSpec::new(widths, Activation::Relu, OutputActivation::Softmax)?, &mut r)?;
        Ok(Self { g, f, lambda })
    }

    pub fn classes(&self) -> usize {
        self.g.spec.output_width()
    }

    /// `g` parameters, then `f` parameters when `f` is an MLP.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.g.tensors();
        if let RelevantTransform::Mlp(f) = &self.f {
            t.extend(f.tensors());
        }
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let Self { g, f, .. } = self;
        let mut t = g.tensors_mut();
        if let RelevantTransform::Mlp(f) = f {
            t.extend(f.tensors_mut());
        }
        t
    }

    fn bind(&self, tape: &mut Tape) -> BoundClassifier {
        BoundClassifier {
            g: self.g.bind(tape),
            f: match &self.f {
                RelevantTransform::Mlp(m) => Some(m.bind(tape)),
                _ => None,
            },
        }
    }

    fn logits_graph(&self, tape: &mut Tape, bound: &BoundClassifier, xz: &Tensor, xr: &Tensor) -> Result<Var> {
        if xz.rows() != xr.rows() {
            return Err(Error::dim("classifier input rows", xz.shape(), xr.shape()));
        }
        let xzv = tape.constant(xz.clone());
        let input = match (&self.f, &bound.f) {
            (RelevantTransform::Drop, _) => xzv,
            (RelevantTransform::Identity, _) => {
                let xrv = tape.constant(xr.clone());
                tape.concat_cols(&[xzv, xrv])?
            }
            (RelevantTransform::Mlp(_), Some(f)) => {
                let xrv = tape.constant(xr.clone());
                let fx = f.forward(tape, xrv)?;
                tape.concat_cols(&[xzv, fx])?
            }
            (RelevantTransform::Mlp(_), None) => unreachable!("mlp transform is always bound"),
        };
        bound.g.forward_logits(tape, input)
    }

    /// Class probabilities. Never reads labels, the sensitive attribute or
    /// latents.
    pub fn predict(&self, xz: &Tensor, xr: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let logits = self.logits_graph(&mut tape, &bound, xz, xr)?;
        Ok(tape.value(logits).softmax_rows())
    }

    fn loss_graph(
        &self,
        tape: &mut Tape,
        bound: &BoundClassifier,
        xz: &Tensor,
        xr: &Tensor,
        y_onehot: &Tensor,
        target: Option<&Tensor>,
    ) -> Result<(Var, Var, Option<Var>)> {
        let logits = self.logits_graph(tape, bound, xz, xr)?;
        let clf = cross_entropy_graph(tape, logits, y_onehot)?;
        match target {
            Some(a) if self.lambda > 0.0 => {
                let probs = tape.softmax(logits)?;
                let reg = reg_graph(tape, probs, a)?;
                let weighted = tape.scale(reg, self.lambda)?;
                Ok((tape.add(clf, weighted)?, clf, Some(reg)))
            }
            _ => Ok((clf, clf, None)),
        }
    }

    /// Loss and gradients in [`FairClassifier::tensors`] order for one batch.
    pub fn loss_and_grads(
        &self,
        xz: &Tensor,
        xr: &Tensor,
        y: &[usize],
        target: Option<&Tensor>,
    ) -> Result<(ClassifierLoss, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let yh = Tensor::one_hot(y, self.classes())?;
        let (total, clf, reg) = self.loss_graph(&mut tape, &bound, xz, xr, &yh, target)?;
        tape.backward(total)?;
        let loss = ClassifierLoss {
            total: tape.value(total).get(0, 0),
            clf: tape.value(clf).get(0, 0),
            reg: reg.map_or(0.0, |r| tape.value(r).get(0, 0)),
        };
        Ok((loss, collect_grads(&tape, &bound.vars())))
    }

    /// Objective on a held-out set, scaled like training: the penalty is
    /// averaged over consecutive chunks of `batch_size` rows in batch scope,
    /// or taken over all rows in full scope.
    pub fn objective(
        &self,
        view: &TrainView<'_>,
        target: Option<&Tensor>,
        batch_size: usize,
        scope: RegScope,
    ) -> Result<ClassifierLoss> {
        let probs = self.predict(view.xz, view.xr)?;
        let n = view.len() as f64;
        let clf = -view
            .y
            .iter()
            .enumerate()
            .map(|(i, &c)| probs.get(i, c).max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / n;
        let reg = match target {
            Some(a) if self.lambda > 0.0 => match scope {
                RegScope::Full => correlation_reg(&probs, a)?,
                RegScope::Batch => {
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    let rows: Vec<usize> = (0..view.len()).collect();
                    for chunk in rows.chunks(batch_size).filter(|c| c.len() >= 2) {
                        sum += correlation_reg(&probs.select_rows(chunk)?, &a.select_rows(chunk)?)?;
                        count += 1;
                    }
                    if count == 0 { 0.0 } else { sum / count as f64 }
                }
            },
            _ => 0.0,
        };
        Ok(ClassifierLoss {
            total: clf + self.lambda * reg,
            clf,
            reg,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train: ClassifierLoss,
    pub validation: Option<ClassifierLoss>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub classifier: FairClassifier,
    pub log: Vec<ClassifierEpoch>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Held-out data for early stopping, with its penalty target.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub view: TrainView<'a>,
    pub target: Option<&'a Tensor>,
}

/// Minibatch Adam on `L_clf + λ L_reg` with `target` held constant. With
/// validation data, keeps the parameters of the best validation objective
/// and stops after `patience` epochs without improvement.
pub fn train_fair(
    mut classifier: FairClassifier,
    train: &TrainView<'_>,
    target: Option<&Tensor>,
    validation: Option<Validation<'_>>,
    cfg: &ClassifierConfig,
) -> Result<TrainedClassifier> {
    train.assert_no_sensitive();
    cfg.validate()?;
    check_lambda(classifier.lambda)?;
    if let Some(v) = &validation {
        v.view.assert_no_sensitive();
    }
    if train.len() < 2 {
        return Err(Error::Config("classifier training needs at least 2 rows".into()));
    }
    for (t, n) in [(target, train.len()), (validation.and_then(|v| v.target), validation.map_or(0, |v| v.view.len()))] {
        if let Some(a) = t {
            if a.rows() != n {
                return Err(Error::dim("penalty target rows", a.shape(), (n, a.cols())));
            }
        }
    }
    let use_reg = classifier.lambda > 0.0 && target.is_some();
    let y_full = Tensor::one_hot(train.y, classifier.classes())?;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr))?;
    let mut order_rng = rng::derive(cfg.seed, 32);
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, FairClassifier)> = None;

    for epoch in 0..cfg.epochs {
        let mut sums = ClassifierLoss::default();
        let mut weight = 0.0;
        for rows in minibatches(train.len(), cfg.batch_size, &mut order_rng) {
            let xz = train.xz.select_rows(&rows)?;
            let xr = train.xr.select_rows(&rows)?;
            let yh = y_full.select_rows(&rows)?;
            let mut tape = Tape::new();
            let bound = classifier.bind(&mut tape);
            let (total, clf, reg) = match (use_reg, cfg.reg_scope) {
                (true, RegScope::Full) => {
                    let logits = classifier.logits_graph(&mut tape, &bound, &xz, &xr)?;
                    let clf = cross_entropy_graph(&mut tape, logits, &yh)?;
                    let all = classifier.logits_graph(&mut tape, &bound, train.xz, train.xr)?;
                    let probs = tape.softmax(all)?;
                    let reg = reg_graph(&mut tape, probs, target.expect("checked"))?;
                    let weighted = tape.scale(reg, classifier.lambda)?;
                    (tape.add(clf, weighted)?, clf, Some(reg))
                }
                (true, RegScope::Batch) if rows.len() < 2 => {
                    // a single leftover row has no covariance
                    let logits = classifier.logits_graph(&mut tape, &bound, &xz, &xr)?;
                    let clf = cross_entropy_graph(&mut tape, logits, &yh)?;
                    (clf, clf, None)
                }
                (true, RegScope::Batch) => {
                    let a = target.expect("checked").select_rows(&rows)?;
                    classifier.loss_graph(&mut tape, &bound, &xz, &xr, &yh, Some(&a))?
                }
                (false, _) => classifier.loss_graph(&mut tape, &bound, &xz, &xr, &yh, None)?,
            };
            tape.backward(total)?;
            let value = tape.value(total).get(0, 0);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("classifier loss at epoch {epoch}")));
            }
            let grads = collect_grads(&tape, &bound.vars());
            adam.step(&mut classifier.tensors_mut(), &grads)?;
            let w = rows.len() as f64;
            sums.total += w * value;
            sums.clf += w * tape.value(clf).get(0, 0);
            sums.reg += w * reg.map_or(0.0, |r| tape.value(r).get(0, 0));
            weight += w;
        }
        let train_loss = ClassifierLoss {
            total: sums.total / weight,
            clf: sums.clf / weight,
            reg: sums.reg / weight,
        };
        let val_loss = match &validation {
            Some(v) => Some(classifier.objective(&v.view, v.target, cfg.batch_size, cfg.reg_scope)?),
            None => None,
        };
        log.push(ClassifierEpoch {
            epoch,
            train: train_loss,
            validation: val_loss,
        });
        if let Some(vl) = val_loss {
            if !vl.total.is_finite() {
                return Err(Error::NonFinite(format!("validation objective at epoch {epoch}")));
            }
            match &best {
                Some((b, _, _)) if vl.total >= *b => {}
                _ => best = Some((vl.total, epoch, classifier.clone())),
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if epoch - best_epoch >= cfg.patience {
                break;
            }
        }
    }
    let last = log.len() - 1;
    Ok(match best {
        Some((_, best_epoch, kept)) => TrainedClassifier {
            classifier: kept,
            log,
            best_epoch,
        },
        None => TrainedClassifier {
            classifier,
            log,
            best_epoch: last,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Vanilla,
    /// Penalizes covariance with the true sensitive attribute. An oracle:
    /// it needs the evaluation-only column.
    ConstrainS,
    /// Penalizes covariance with the observed relevant features.
    ConstrainR,
    /// Drops the relevant features.
    RemoveR,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Self::Vanilla, Self::ConstrainS, Self::ConstrainR, Self::RemoveR];

    pub fn name(self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::ConstrainS => "constrain_s",
            Self::ConstrainR => "constrain_r",
            Self::RemoveR => "remove_r",
        }
    }
}

/// Sensitive columns handed to the oracle baseline, train then validation.
#[derive(Debug, Clone, Copy)]
pub struct OracleSensitive<'a> {
    pub train: &'a [u8],
    pub validation: Option<&'a [u8]>,
}

fn s_column(s: &[u8]) -> Tensor {
    Tensor::column(&s.iter().map(|&v| f64::from(v)).collect::<Vec<_>>())
}

pub fn train_baseline(
    kind: Baseline,
    train: &TrainView<'_>,
    validation: Option<&TrainView<'_>>,
    oracle: Option<OracleSensitive<'_>>,
    lambda: f64,
    cfg: &ClassifierConfig,
) -> Result<TrainedClassifier> {
    let (d_z, d_r, m) = (train.xz.cols(), train.xr.cols(), train.classes);
    match kind {
        Baseline::Vanilla => {
            let c = FairClassifier::init(d_z, d_r, m, 0.0, cfg)?;
            let val = validation.map(|v| Validation { view: *v, target: None });
            train_fair(c, train, None, val, cfg)
        }
        Baseline::RemoveR => {
            let cfg = ClassifierConfig {
                transform: TransformKind::Drop,
                ..cfg.clone()
            };
            let c = FairClassifier::init(d_z, d_r, m, 0.0, &cfg)?;
            let val = validation.map(|v| Validation { view: *v, target: None });
            train_fair(c, train, None, val, &cfg)
        }
        Baseline::ConstrainR => {
            let c = FairClassifier::init(d_z, d_r, m, lambda, cfg)?;
            let val = validation.map(|v| Validation {
                view: *v,
                target: Some(v.xr),
            });
            train_fair(c, train, Some(train.xr), val, cfg)
        }
        Baseline::ConstrainS => {
            let oracle = oracle.ok_or_else(|| {
                Error::Config("constrain_s is an oracle baseline and needs the sensitive column".into())
            })?;
            if oracle.train.len() != train.len() {
                return Err(Error::dim("oracle s rows", (oracle.train.len(), 1), (train.len(), 1)));
            }
            let s_train = s_column(oracle.train);
            let s_val = match (validation, oracle.validation) {
                (Some(v), Some(s)) if s.len() == v.len() => Some(s_column(s)),
                (Some(v), Some(s)) => return Err(Error::dim("oracle s rows", (s.len(), 1), (v.len(), 1))),
                (Some(_), None) => {
                    return Err(Error::Config("constrain_s validation needs the sensitive column".into()))
                }
                (None, _) => None,
            };
            let c = FairClassifier::init(d_z, d_r, m, lambda, cfg)?;
            let val = validation.map(|v| Validation {
                view: *v,
                target: s_val.as_ref(),
            });
            train_fair(c, train, Some(&s_train), val, cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, FeatureColumn, Targets};

    #[test]
    fn reg_examples() {
        let y = Tensor::column(&[1.0, 0.0]);
        let a = Tensor::column(&[1.0, -1.0]);
        assert!((correlation_reg(&y, &a).unwrap() - 1.0).abs() < 1e-12);
        let constant = Tensor::full(2, 1, 3.0);
        assert_eq!(correlation_reg(&y, &constant).unwrap(), 0.0);
        assert!(matches!(correlation_reg(&y, &Tensor::zeros(3, 1)), Err(Error::Dimension { .. })));
        assert!(matches!(
            correlation_reg(&Tensor::zeros(1, 1), &Tensor::zeros(1, 1)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn reg_invariances() {
        let mut r = rng::seeded(0);
        let y = Tensor::randn(9, 2, &mut r).softmax_rows();
        let a = Tensor::randn(9, 3, &mut r);
        let base = correlation_reg(&y, &a).unwrap();
        assert!(base >= 0.0);
        let shifted = a.map(|v| v + 4.0);
        assert!((correlation_reg(&y, &shifted).unwrap() - base).abs() < 1e-10);
        let perm = [8, 2, 5, 0, 1, 7, 3, 6, 4];
        let p = correlation_reg(&y.select_rows(&perm).unwrap(), &a.select_rows(&perm).unwrap()).unwrap();
        assert!((p - base).abs() < 1e-10);
    }

    fn dataset(n: usize, seed: u64, xz_signal: bool) -> Dataset {
        let mut r = rng::seeded(seed);
        let xr = Tensor::randn(n, 2, &mut r);
        let noise = Tensor::randn(n, 2, &mut r);
        let y: Vec<usize> = (0..n).map(|i| usize::from(xr.get(i, 0) + 0.3 * noise.get(i, 1) > 0.0)).collect();
        let xz = if xz_signal {
            Tensor::from_vec(n, 1, (0..n).map(|i| y[i] as f64 + noise.get(i, 0)).collect()).unwrap()
        } else {
            noise.slice_cols(0, 1).unwrap()
        };
        Dataset::new(
            xz,
            vec![FeatureColumn::raw("z0", "z0")],
            xr,
            vec![FeatureColumn::raw("r0", "r0"), FeatureColumn::raw("r1", "r1")],
            Targets {
                y,
                classes: 2,
                label_name: "y".into(),
                class_names: vec!["0".into(), "1".into()],
                s: Some((0..n).map(|i| (i % 2) as u8).collect()),
                sensitive_name: Some("s".into()),
                sensitive_levels: vec!["0".into(), "1".into()],
            },
        )
        .unwrap()
    }

    fn quick() -> ClassifierConfig {
        ClassifierConfig {
            epochs: 15,
            batch_size: 32,
            lr: 1e-2,
            patience: 5,
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn zero_g_is_uniform_and_rows_normalized() {
        let mut c = FairClassifier::init(1, 2, 3, 0.0, &quick()).unwrap();
        for t in c.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let mut r = rng::seeded(1);
        let p = c.predict(&Tensor::randn(5, 1, &mut r), &Tensor::randn(5, 2, &mut r)).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let c = FairClassifier::init(1, 2, 3, 0.0, &quick()).unwrap();
        let p = c.predict(&Tensor::randn(5, 1, &mut r), &Tensor::randn(5, 2, &mut r)).unwrap();
        for i in 0..5 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(c.predict(&Tensor::zeros(5, 2), &Tensor::zeros(5, 2)).is_err());
    }

    #[test]
    fn lambda_zero_matches_vanilla_bitwise() {
        let d = dataset(200, 2, false);
        let view = d.train_view();
        let a = Tensor::randn(200, 2, &mut rng::seeded(3));
        let vanilla = train_baseline(Baseline::Vanilla, &view, None, None, 0.0, &quick()).unwrap();
        let c = FairClassifier::init(1, 2, 2, 0.0, &quick()).unwrap();
        let fair = train_fair(c, &view, Some(&a), None, &quick()).unwrap();
        assert_eq!(vanilla, fair);
        let s = d.sensitive().unwrap();
        let oracle = OracleSensitive {
            train: s,
            validation: None,
        };
        let cs = train_baseline(Baseline::ConstrainS, &view, None, Some(oracle), 0.0, &quick()).unwrap();
        assert_eq!(vanilla, cs);
    }

    #[test]
    fn constrain_s_requires_oracle() {
        let d = dataset(50, 4, false);
        let err = train_baseline(Baseline::ConstrainS, &d.train_view(), None, None, 0.1, &quick());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn remove_r_without_signal_is_near_majority() {
        let d = dataset(400, 5, false);
        let t = train_baseline(Baseline::RemoveR, &d.train_view(), None, None, 0.0, &quick()).unwrap();
        let p = t.classifier.predict(d.xz(), d.xr()).unwrap();
        let acc = crate::metrics::accuracy(&p, d.labels()).unwrap();
        let ones = d.labels().iter().filter(|&&y| y == 1).count() as f64 / 400.0;
        let majority = ones.max(1.0 - ones);
        assert!(acc <= majority + 0.05, "acc {acc} vs majority {majority}");
    }

    #[test]
    fn early_stopping_keeps_best_epoch() {
        let d = dataset(300, 6, true);
        let cfg = ClassifierConfig {
            epochs: 40,
            patience: 3,
            ..quick()
        };
        let view = d.train_view();
        let t = train_baseline(Baseline::Vanilla, &view, Some(&view), None, 0.0, &cfg).unwrap();
        let vals: Vec<f64> = t.log.iter().map(|e| e.validation.unwrap().total).collect();
        let best = vals.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(vals[t.best_epoch], best);
        assert!(t.log.len() <= cfg.epochs);
        let again = t.classifier.objective(&view, None, cfg.batch_size, RegScope::Batch).unwrap();
        assert_eq!(again.total, best);
    }

    #[test]
    fn full_scope_and_mlp_transform_train() {
        let d = dataset(120, 7, true);
        let cfg = ClassifierConfig {
            reg_scope: RegScope::Full,
            transform: TransformKind::Mlp,
            epochs: 3,
            ..quick()
        };
        let a = d.xr().slice_cols(0, 1).unwrap();
        let c = FairClassifier::init(1, 2, 2, 0.5, &cfg).unwrap();
        let t = train_fair(c, &d.train_view(), Some(&a), None, &cfg).unwrap();
        assert!(t.log.iter().all(|e| e.train.reg > 0.0));
        assert_eq!(t.classifier.f.kind(), TransformKind::Mlp);
    }
}
