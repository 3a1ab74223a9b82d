//! Run configuration: a TOML file plus command-line overrides.
//!
//! ```toml
//! seed = 0
//! out = "runs/synthetic"
//! method = "fair_ws"          # fair_ws | vanilla | constrain_s | constrain_r | remove_r
//! latents = "mean"            # mean | sample
//!
//! [data]
//! source = "synth"            # synth | csv
//! # path = "data/adult.csv"   # csv only
//!
//! [data.synth]                # synthetic generator, see `SynthConfig`
//! n = 20000
//!
//! [data.roles]                # csv only: column -> role[:kind]
//! # age = "relevant"
//!
//! [split]
//! train = 0.5
//! validation = 0.25
//! test = 0.25
//!
//! [estimator]
//! d_a = 8
//! d_z = 8
//! beta = 0.01
//! mi = false
//!
//! [classifier]
//! lambda = 0.017
//! reg_scope = "batch"
//!
//! [sweep]
//! lambda_grid = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05]
//! beta_grid = [0.001, 0.01, 0.1, 0.5, 1.0, 1.5, 3.0, 5.0]
//! ```
//!
//! Every section and key is optional. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use fairlatent::classifier::{Baseline, ClassifierConfig, RegScope, TransformKind};
use fairlatent::data::{RoleConfig, SplitSpec, SynthConfig};
use fairlatent::estimator::{EstimatorConfig, EstimatorTraining, LatentMode};
use fairlatent::mine::MineConfig;
use fairlatent::nn::Activation;
use fairlatent::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    FairWs,
    Vanilla,
    ConstrainS,
    ConstrainR,
    RemoveR,
}

impl Method {
    pub fn baseline(self) -> Option<Baseline> {
        match self {
            Self::FairWs => None,
            Self::Vanilla => Some(Baseline::Vanilla),
            Self::ConstrainS => Some(Baseline::ConstrainS),
            Self::ConstrainR => Some(Baseline::ConstrainR),
            Self::RemoveR => Some(Baseline::RemoveR),
        }
    }

    pub fn uses_estimator(self) -> bool {
        self == Self::FairWs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    Synth,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataKind,
    pub path: Option<PathBuf>,
    pub synth: SynthConfig,
    pub roles: RoleConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let d = SplitSpec::default();
        Self {
            train: d.train,
            validation: d.validation,
            test: d.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub d_a: usize,
    pub d_z: usize,
    pub hidden: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub activation: Activation,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mi: bool,
    pub mine: MineSection,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let m = EstimatorConfig::default();
        let t = EstimatorTraining::default();
        Self {
            d_a: m.d_a,
            d_z: m.d_z,
            hidden: m.hidden,
            encoder_layers: m.encoder_layers,
            decoder_layers: m.decoder_layers,
            activation: m.activation,
            beta: m.beta,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            mi: false,
            mine: MineSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineSection {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub ema_decay: f64,
    pub lr: f64,
    pub disc_steps: usize,
    pub weight: f64,
}

impl Default for MineSection {
    fn default() -> Self {
        let m = MineConfig::default();
        Self {
            hidden: m.hidden,
            hidden_layers: m.hidden_layers,
            ema_decay: m.ema_decay,
            lr: m.lr,
            disc_steps: m.disc_steps,
            weight: m.weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub lambda: f64,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub transform: TransformKind,
    pub transform_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub reg_scope: RegScope,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        Self {
            lambda: 0.017,
            hidden: c.hidden,
            hidden_layers: c.hidden_layers,
            transform: c.transform,
            transform_width: c.transform_width,
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.lr,
            patience: c.patience,
            reg_scope: c.reg_scope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub lambda_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lambda_grid: vec![0.0, 0.01, 0.02, 0.03, 0.04, 0.05],
            beta_grid: vec![0.001, 0.01, 0.1, 0.5, 1.0, 1.5, 3.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub method: Method,
    pub latents: LatentMode,
    pub data: DataSection,
    pub split: SplitSection,
    pub estimator: EstimatorSection,
    pub classifier: ClassifierSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            method: Method::default(),
            latents: LatentMode::default(),
            data: DataSection::default(),
            split: SplitSection::default(),
            estimator: EstimatorSection::default(),
            classifier: ClassifierSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub mi: Option<bool>,
    pub latents: Option<LatentMode>,
    pub reg_scope: Option<RegScope>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.lambda {
            self.classifier.lambda = v;
        }
        if let Some(v) = o.beta {
            self.estimator.beta = v;
        }
        if let Some(v) = o.mi {
            self.estimator.mi = v;
        }
        if let Some(v) = o.latents {
            self.latents = v;
        }
        if let Some(v) = o.reg_scope {
            self.classifier.reg_scope = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
    }

    /// Checks every numeric invariant without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        if !(self.estimator.beta > 0.0) || !self.estimator.beta.is_finite() {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.estimator.beta)));
        }
        check_lambda(self.classifier.lambda)?;
        for (name, lr) in [("estimator", self.estimator.lr), ("classifier", self.classifier.lr)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("{name} lr must be > 0, got {lr}")));
            }
        }
        match self.data.source {
            DataKind::Synth => self.data.synth.validate()?,
            DataKind::Csv => {
                if self.data.path.is_none() {
                    return Err(Error::Config("data.source = \"csv\" needs data.path".into()));
                }
                if self.data.roles.is_empty() {
                    return Err(Error::Config("data.source = \"csv\" needs a [data.roles] table".into()));
                }
            }
        }
        self.split_spec().validate()?;
        self.estimator_config().validate()?;
        self.estimator_training().validate()?;
        self.mine_config().validate()?;
        self.classifier_config().validate()?;
        for &v in &self.sweep.lambda_grid {
            check_lambda(v)?;
        }
        for &v in &self.sweep.beta_grid {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("beta grid values must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Creates the output directory and checks that it is writable.
    pub fn prepare_out_dir(&self) -> Result<()> {
        ensure_writable(&self.out)
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train: self.split.train,
            validation: self.split.validation,
            test: self.split.test,
            seed: self.seed,
        }
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        let e = &self.estimator;
        EstimatorConfig {
            d_a: e.d_a,
            d_z: e.d_z,
            hidden: e.hidden,
            encoder_layers: e.encoder_layers,
            decoder_layers: e.decoder_layers,
            activation: e.activation,
            beta: e.beta,
        }
    }

    pub fn estimator_training(&self) -> EstimatorTraining {
        EstimatorTraining {
            epochs: self.estimator.epochs,
            batch_size: self.estimator.batch_size,
            lr: self.estimator.lr,
            seed: self.seed,
        }
    }

    pub fn mine_config(&self) -> MineConfig {
        let m = &self.estimator.mine;
        MineConfig {
            hidden: m.hidden,
            hidden_layers: m.hidden_layers,
            ema_decay: m.ema_decay,
            lr: m.lr,
            disc_steps: m.disc_steps,
            weight: m.weight,
            seed: self.seed,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        let c = &self.classifier;
        ClassifierConfig {
            hidden: c.hidden,
            hidden_layers: c.hidden_layers,
            transform: c.transform,
            transform_width: c.transform_width,
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.lr,
            patience: c.patience,
            reg_scope: c.reg_scope,
            seed: self.seed,
        }
    }

    /// Name used in reports, e.g. `fair_ws_mi`.
    pub fn method_name(&self) -> String {
        match self.method.baseline() {
            Some(b) => b.name().to_string(),
            None if self.estimator.mi => "fair_ws_mi".into(),
            None => "fair_ws".into(),
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn check_lambda(v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::Config(format!("lambda must be >= 0, got {v}")));
    }
    Ok(())
}

pub fn ensure_writable(dir: &Path) -> Result<()> {
    let fail = |e: std::io::Error| Error::Config(format!("output directory {} is not writable: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(fail)?;
    let probe = dir.join(".write-probe");
    std::fs::write(&probe, b"").map_err(fail)?;
    std::fs::remove_file(&probe).map_err(fail)?;
    Ok(())
}
