//! Neural lower-bound estimate of `I(A; Z)` and the adversarial alternation
//! that pushes the estimator's latents toward independence.
//!
//! The critic `D(a, z)` is an unbounded scalar network. The bound is
//! `mean D(a_i, z_i) - log mean exp D(a_i, z_pi(i))` with `pi` a within-batch
//! permutation. Critic updates replace the denominator of the log term's
//! gradient with a moving average to reduce its minibatch bias.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{ElboNoise, ElboTerms, EstimatorBatch, EstimatorModel};
use crate::nn::{collect_grads, Activation, BoundMlp, Mlp, MlpSpec, OutputActivation};
use crate::optim::{AdamConfig, AdamState};
use crate::rng;
use crate::tape::{log_mean_exp, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MineConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub ema_decay: f64,
    pub lr: f64,
    /// Critic steps before each encoder step.
    pub disc_steps: usize,
    /// Weight of the MI penalty in the encoder objective.
    pub weight: f64,
    pub seed: u64,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            hidden_layers: 2,
            ema_decay: 0.99,
            lr: 1e-3,
            disc_steps: 1,
            weight: 1.0,
            seed: 0,
        }
    }
}

impl MineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.disc_steps == 0 {
            return Err(Error::Config("critic width and disc_steps must be >= 1".into()));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Config(format!("ema_decay must be in (0, 1), got {}", self.ema_decay)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("critic lr must be > 0, got {}", self.lr)));
        }
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return Err(Error::Config(format!("MI weight must be >= 0, got {}", self.weight)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiPhase {
    Discriminator,
    Encoder,
}

#[derive(Debug, Clone)]
pub struct MineDiscriminator {
    pub network: Mlp,
    pub config: MineConfig,
    /// Log of the moving average of `mean exp D` over marginal pairs.
    log_ema: Option<f64>,
    adam: AdamState,
    rng: rng::Rng,
    disc_step_count: u64,
    encoder_step_count: u64,
    phases: Vec<MiPhase>,
}

/// Outcome of one adversarial alternation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiStep {
    /// Critic objective after its last ascent step.
    pub disc_objective: f64,
    /// Bound value added to the encoder loss, before weighting.
    pub mi_estimate: f64,
    /// Total encoder loss: negative ELBO plus the weighted penalty.
    pub loss: f64,
    pub terms: ElboTerms,
}

fn critic_spec(d_in: usize, cfg: &MineConfig) -> Result<MlpSpec> {
    let mut widths = vec![d_in];
    widths.extend(std::iter::repeat_n(cfg.hidden, cfg.hidden_layers));
    widths.push(1);
    MlpSpec::new(widths, Activation::Relu, OutputActivation::Identity)
}

/// `mean D(a, z) - log mean exp D(a, z[perm])` on the tape, returned as
/// `(joint mean, log-mean-exp of marginal scores)`.
fn bound_graph(
    tape: &mut Tape,
    critic: &BoundMlp,
    a: Var,
    z: Var,
    perm: &[usize],
) -> Result<(Var, Var)> {
    let joint_in = tape.concat_cols(&[a, z])?;
    let joint = critic.forward(tape, joint_in)?;
    let joint_mean = tape.mean(joint)?;
    let z_shuf = tape.gather_rows(z, perm)?;
    let marg_in = tape.concat_cols(&[a, z_shuf])?;
    let marg = critic.forward(tape, marg_in)?;
    let lme = tape.log_mean_exp(marg)?;
    Ok((joint_mean, lme))
}

fn check_pair(a: &Tensor, z: &Tensor) -> Result<()> {
    if a.rows() != z.rows() {
        return Err(Error::dim("mi pair rows", a.shape(), z.shape()));
    }
    if a.rows() < 2 {
        return Err(Error::Contract(format!("MI needs at least 2 rows, got {}", a.rows())));
    }
    Ok(())
}

impl MineDiscriminator {
    pub fn new(d_a: usize, d_z: usize, config: MineConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = rng::derive(config.seed, 21);
        let network = Mlp::init(critic_spec(d_a + d_z, &config)?, &mut init_rng)?;
        Self::with_network(network, config)
    }

    /// All-zero critic, so every score is 0.
    pub fn zeros(d_a: usize, d_z: usize, config: MineConfig) -> Result<Self> {
        config.validate()?;
        let network = Mlp::zeros(critic_spec(d_a + d_z, &config)?)?;
        Self::with_network(network, config)
    }

    pub fn with_network(network: Mlp, config: MineConfig) -> Result<Self> {
        config.validate()?;
        if network.spec.output_width() != 1 {
            return Err(Error::Config("critic must output one score".into()));
        }
        Ok(Self {
            adam: AdamState::new(AdamConfig::with_lr(config.lr))?,
            rng: rng::derive(config.seed, 22),
            network,
            config,
            log_ema: None,
            disc_step_count: 0,
            encoder_step_count: 0,
            phases: Vec::new(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.network.spec.input_width()
    }

    pub fn ema_denominator(&self) -> Option<f64> {
        self.log_ema.map(f64::exp)
    }

    pub fn disc_step_count(&self) -> u64 {
        self.disc_step_count
    }

    pub fn encoder_step_count(&self) -> u64 {
        self.encoder_step_count
    }

    /// Every critic and encoder step taken, in order.
    pub fn phases(&self) -> &[MiPhase] {
        &self.phases
    }

    /// Bound value and its gradient with respect to the critic parameters.
    pub fn objective_and_grads(&self, a: &Tensor, z: &Tensor, perm: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        check_pair(a, z)?;
        let mut tape = Tape::new();
        let critic = self.network.bind(&mut tape);
        let av = tape.constant(a.clone());
        let zv = tape.constant(z.clone());
        let (joint, lme) = bound_graph(&mut tape, &critic, av, zv, perm)?;
        let value = tape.sub(joint, lme)?;
        tape.backward(value)?;
        let grads = collect_grads(&tape, &critic.vars());
        Ok((tape.value(value).get(0, 0), grads))
    }

    /// One ascent step on the bound for `(a, z)`. Returns the plain batch
    /// estimate before the update.
    pub fn disc_step(&mut self, a: &Tensor, z: &Tensor) -> Result<f64> {
        check_pair(a, z)?;
        let perm = rng::permutation(a.rows(), &mut self.rng);
        let mut tape = Tape::new();
        let critic = self.network.bind(&mut tape);
        let av = tape.constant(a.clone());
        let zv = tape.constant(z.clone());
        let (joint, lme) = bound_graph(&mut tape, &critic, av, zv, &perm)?;
        let batch_lme = tape.value(lme).get(0, 0);
        let estimate = tape.value(joint).get(0, 0) - batch_lme;

        let decay = self.config.ema_decay;
        let log_ema = match self.log_ema {
            None => batch_lme,
            Some(prev) => {
                let (x, y) = (decay.ln() + prev, (1.0 - decay).ln() + batch_lme);
                let m = x.max(y);
                m + ((x - m).exp() + (y - m).exp()).ln()
            }
        };
        self.log_ema = Some(log_ema);

        // surrogate whose gradient is grad(mean D_joint) - grad(mean e^D) / ema
        let shifted = tape.add_scalar(lme, -log_ema)?;
        let ratio = tape.exp(shifted)?;
        let surrogate = tape.sub(joint, ratio)?;
        let loss = tape.scale(surrogate, -1.0)?;
        tape.backward(loss)?;
        let grads = collect_grads(&tape, &critic.vars());
        self.adam.step(&mut self.network.tensors_mut(), &grads)?;
        self.disc_step_count += 1;
        self.phases.push(MiPhase::Discriminator);
        Ok(estimate)
    }
}

/// Plain bound estimate on `(a, z)` with the marginal pairs drawn by a
/// permutation from `shuffle_seed`.
pub fn mi_estimate(disc: &MineDiscriminator, a: &Tensor, z: &Tensor, shuffle_seed: u64) -> Result<f64> {
    check_pair(a, z)?;
    let perm = rng::permutation(a.rows(), &mut rng::seeded(shuffle_seed));
    let joint_in = Tensor::concat_cols(&[a, z])?;
    let marg_in = Tensor::concat_cols(&[a, &z.select_rows(&perm)?])?;
    let joint = disc.network.predict(&joint_in)?;
    let marg = disc.network.predict(&marg_in)?;
    Ok(joint.mean() - log_mean_exp(marg.data()))
}

/// Fits the critic on fixed samples with minibatch ascent. Returns the
/// batch estimate of every step.
pub fn train_discriminator(
    disc: &mut MineDiscriminator,
    a: &Tensor,
    z: &Tensor,
    steps: usize,
    batch_size: usize,
) -> Result<Vec<f64>> {
    check_pair(a, z)?;
    if batch_size < 2 {
        return Err(Error::Config("critic batch size must be >= 2".into()));
    }
    let mut trace = Vec::with_capacity(steps);
    let mut order = Vec::new();
    for _ in 0..steps {
        if order.len() < batch_size {
            order = rng::permutation(a.rows(), &mut disc.rng);
        }
        let rows: Vec<usize> = order.split_off(order.len().saturating_sub(batch_size));
        let est = disc.disc_step(&a.select_rows(&rows)?, &z.select_rows(&rows)?)?;
        if !est.is_finite() {
            return Err(Error::NonFinite("critic objective".into()));
        }
        trace.push(est);
    }
    Ok(trace)
}

/// Negative ELBO plus `weight` times the bound evaluated on the posterior
/// means with a frozen critic. Gradients are for the estimator parameters.
pub fn penalized_loss_and_grads(
    disc: &MineDiscriminator,
    model: &EstimatorModel,
    batch: &EstimatorBatch,
    noise: &ElboNoise,
    perm: &[usize],
) -> Result<(f64, f64, ElboTerms, Vec<Tensor>)> {
    if disc.input_width() != model.config.d_a + model.config.d_z {
        return Err(Error::dim(
            "critic input",
            (1, disc.input_width()),
            (1, model.config.d_a + model.config.d_z),
        ));
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let elbo = model.build_elbo(&mut tape, &bound, batch, noise)?;
    let critic = disc.network.bind_frozen(&mut tape);
    let (joint, lme) = bound_graph(&mut tape, &critic, elbo.mean_a, elbo.mean_z, perm)?;
    let mi = tape.sub(joint, lme)?;
    let penalty = tape.scale(mi, disc.config.weight)?;
    let loss = tape.add(elbo.loss, penalty)?;
    tape.backward(loss)?;
    let grads = collect_grads(&tape, &bound.vars());
    Ok((
        tape.value(loss).get(0, 0),
        tape.value(mi).get(0, 0),
        elbo.terms(&tape, model.config.beta),
        grads,
    ))
}

/// Critic ascent step(s) on the current posterior means, then one estimator
/// step on the negative ELBO plus the MI penalty.
pub fn mi_adversarial_step(
    disc: &mut MineDiscriminator,
    model: &mut EstimatorModel,
    adam: &mut AdamState,
    batch: &EstimatorBatch,
    noise: &ElboNoise,
) -> Result<MiStep> {
    let (pa, pz) = model.encode(batch)?;
    let mut disc_objective = 0.0;
    for _ in 0..disc.config.disc_steps {
        disc_objective = disc.disc_step(&pa.mean, &pz.mean)?;
    }
    let perm = rng::permutation(batch.len(), &mut disc.rng);
    let (loss, mi, terms, grads) = penalized_loss_and_grads(disc, model, batch, noise, &perm)?;
    adam.step(&mut model.tensors_mut(), &grads)?;
    disc.encoder_step_count += 1;
    disc.phases.push(MiPhase::Encoder);
    Ok(MiStep {
        disc_objective,
        mi_estimate: mi,
        loss,
        terms,
    })
}
