//! Variational estimator of the latent sensitive code `a` and the intrinsic
//! code `z`.
//!
//! Encoders produce diagonal Gaussian posteriors `q(a | xr, y)` and
//! `q(z | xz, xr, y)`; decoders reconstruct `xr` from `(a, z)`, `xz` from `z`
//! and `y` from `(z, a)`. Training minimizes the negative β-weighted ELBO.

use serde::{Deserialize, Serialize};

use crate::data::TrainView;
use crate::error::{Error, Result};
use crate::mine::MineDiscriminator;
use crate::nn::{collect_grads, Activation, BoundMlp, Mlp, MlpSpec, OutputActivation};
use crate::optim::{AdamConfig, AdamState};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Diagonal Gaussian, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl GaussianPosterior {
    /// Clamps the log-variance into `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    pub fn new(mean: Tensor, log_var: Tensor) -> Result<Self> {
        if mean.shape() != log_var.shape() {
            return Err(Error::dim("gaussian posterior", mean.shape(), log_var.shape()));
        }
        let log_var = log_var.map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX));
        Ok(Self { mean, log_var })
    }
}

/// `mean + exp(0.5 * log_var) * noise`.
pub fn reparameterize(post: &GaussianPosterior, noise: &Tensor) -> Result<Tensor> {
    if noise.shape() != post.mean.shape() {
        return Err(Error::dim("reparameterize", post.mean.shape(), noise.shape()));
    }
    let std = post.log_var.map(|v| (0.5 * v).exp());
    post.mean.add(&std.hadamard(noise)?)
}

/// Per-sample `KL(q || N(0, I)) = 0.5 * sum_d (mu^2 + exp(lv) - 1 - lv)`.
pub fn kl_to_standard_normal(post: &GaussianPosterior) -> Vec<f64> {
    (0..post.mean.rows())
        .map(|i| {
            let kl: f64 = post
                .mean
                .row(i)
                .iter()
                .zip(post.log_var.row(i))
                .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
                .sum();
            0.5 * kl
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub d_a: usize,
    pub d_z: usize,
    pub hidden: usize,
    /// Linear layers per encoder.
    pub encoder_layers: usize,
    /// Linear layers per decoder.
    pub decoder_layers: usize,
    pub activation: Activation,
    pub beta: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            d_a: 8,
            d_z: 8,
            hidden: 8,
            encoder_layers: 3,
            decoder_layers: 2,
            activation: Activation::Tanh,
            beta: 0.01,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_a == 0 || self.d_z == 0 || self.hidden == 0 {
            return Err(Error::Config("estimator dimensions must be >= 1".into()));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::Config("estimator networks need at least one layer".into()));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        Ok(())
    }
}

fn widths(input: usize, hidden: usize, layers: usize, output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat_n(hidden, layers - 1));
    w.push(output);
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorModel {
    pub encoder_a: Mlp,
    pub encoder_z: Mlp,
    pub decoder_xr: Mlp,
    pub decoder_xz: Mlp,
    pub decoder_y: Mlp,
    pub config: EstimatorConfig,
    /// `(d_z_obs, d_r, classes)` of the data the model was built for.
    pub data_dims: (usize, usize, usize),
}

/// A minibatch as the estimator sees it.
#[derive(Debug, Clone)]
pub struct EstimatorBatch {
    pub xz: Tensor,
    pub xr: Tensor,
    pub y_onehot: Tensor,
}

impl EstimatorBatch {
    pub fn new(xz: Tensor, xr: Tensor, y: &[usize], classes: usize) -> Result<Self> {
        if xz.rows() != y.len() || xr.rows() != y.len() {
            return Err(Error::dim("estimator batch", xz.shape(), xr.shape()));
        }
        Ok(Self {
            xz,
            xr,
            y_onehot: Tensor::one_hot(y, classes)?,
        })
    }

    pub fn from_view(view: &TrainView<'_>, rows: &[usize]) -> Result<Self> {
        let y: Vec<usize> = rows.iter().map(|&i| view.y[i]).collect();
        Self::new(view.xz.select_rows(rows)?, view.xr.select_rows(rows)?, &y, view.classes)
    }

    pub fn len(&self) -> usize {
        self.xz.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Noise for both reparameterized samples.
#[derive(Debug, Clone)]
pub struct ElboNoise {
    pub a: Tensor,
    pub z: Tensor,
}

impl ElboNoise {
    pub fn zeros(n: usize, d_a: usize, d_z: usize) -> Self {
        Self {
            a: Tensor::zeros(n, d_a),
            z: Tensor::zeros(n, d_z),
        }
    }

    pub fn sample(n: usize, d_a: usize, d_z: usize, rng: &mut rng::Rng) -> Self {
        Self {
            a: Tensor::randn(n, d_a, rng),
            z: Tensor::randn(n, d_z, rng),
        }
    }
}

/// Batch means of each term of the negative ELBO.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElboTerms {
    pub recon_xr: f64,
    pub recon_xz: f64,
    pub cross_entropy: f64,
    pub kl_z: f64,
    /// Unweighted `KL(a)`.
    pub kl_a: f64,
    /// `beta * KL(a)`, the contribution actually in the loss.
    pub kl_a_weighted: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.recon_xr + self.recon_xz + self.cross_entropy + self.kl_z + self.kl_a_weighted
    }
}

pub(crate) struct BoundEstimator {
    enc_a: BoundMlp,
    enc_z: BoundMlp,
    dec_xr: BoundMlp,
    dec_xz: BoundMlp,
    dec_y: BoundMlp,
}

impl BoundEstimator {
    pub(crate) fn vars(&self) -> Vec<Var> {
        [&self.enc_a, &self.enc_z, &self.dec_xr, &self.dec_xz, &self.dec_y]
            .iter()
            .flat_map(|m| m.vars())
            .collect()
    }
}

/// Handles into a built ELBO graph.
pub(crate) struct ElboGraph {
    pub loss: Var,
    pub mean_a: Var,
    pub mean_z: Var,
    recon_xr: Var,
    recon_xz: Var,
    cross_entropy: Var,
    kl_z: Var,
    kl_a: Var,
}

impl ElboGraph {
    pub(crate) fn terms(&self, tape: &Tape, beta: f64) -> ElboTerms {
        let v = |x: Var| tape.value(x).get(0, 0);
        ElboTerms {
            recon_xr: v(self.recon_xr),
            recon_xz: v(self.recon_xz),
            cross_entropy: v(self.cross_entropy),
            kl_z: v(self.kl_z),
            kl_a: v(self.kl_a),
            kl_a_weighted: beta * v(self.kl_a),
        }
    }
}

/// Mean over rows of `0.5 * sum_d (mu^2 + exp(lv) - 1 - lv)`.
fn kl_graph(tape: &mut Tape, mean: Var, log_var: Var) -> Result<Var> {
    let m2 = tape.square(mean)?;
    let e = tape.exp(log_var)?;
    let t = tape.add(m2, e)?;
    let t = tape.sub(t, log_var)?;
    let t = tape.add_scalar(t, -1.0)?;
    let per_row = tape.sum_cols(t)?;
    let kl = tape.mean(per_row)?;
    tape.scale(kl, 0.5)
}

/// Mean over rows of `0.5 * ||x - x_hat||^2`.
fn half_sq_error(tape: &mut Tape, x_hat: Var, x: Var) -> Result<Var> {
    let d = tape.sub(x_hat, x)?;
    let d2 = tape.square(d)?;
    let per_row = tape.sum_cols(d2)?;
    let m = tape.mean(per_row)?;
    tape.scale(m, 0.5)
}

fn split_posterior(tape: &mut Tape, out: Var, d: usize) -> Result<(Var, Var)> {
    let mean = tape.slice_cols(out, 0, d)?;
    let raw_lv = tape.slice_cols(out, d, 2 * d)?;
    let log_var = tape.clamp(raw_lv, LOG_VAR_MIN, LOG_VAR_MAX)?;
    Ok((mean, log_var))
}

fn sample_graph(tape: &mut Tape, mean: Var, log_var: Var, noise: &Tensor) -> Result<Var> {
    let half = tape.scale(log_var, 0.5)?;
    let std = tape.exp(half)?;
    let eps = tape.constant(noise.clone());
    let scaled = tape.mul(std, eps)?;
    tape.add(mean, scaled)
}

impl EstimatorModel {
    pub fn init(
        config: EstimatorConfig,
        d_z_obs: usize,
        d_r: usize,
        classes: usize,
        rng: &mut rng::Rng,
    ) -> Result<Self> {
        Self::build(config, d_z_obs, d_r, classes, |spec| Mlp::init(spec, rng))
    }

    /// All weights and biases zero.
    pub fn zeros(config: EstimatorConfig, d_z_obs: usize, d_r: usize, classes: usize) -> Result<Self> {
        Self::build(config, d_z_obs, d_r, classes, Mlp::zeros)
    }

    fn build(
        config: EstimatorConfig,
        d_z_obs: usize,
        d_r: usize,
        classes: usize,
        mut make: impl FnMut(MlpSpec) -> Result<Mlp>,
    ) -> Result<Self> {
        config.validate()?;
        if d_z_obs == 0 || d_r == 0 || classes < 2 {
            return Err(Error::Config(format!(
                "estimator needs xz and xr columns and >= 2 classes, got ({d_z_obs}, {d_r}, {classes})"
            )));
        }
        let c = &config;
        let act = c.activation;
        let enc = |input, out| widths(input, c.hidden, c.encoder_layers, out);
        let dec = |input, out| widths(input, c.hidden, c.decoder_layers, out);
        let id = OutputActivation::Identity;
        Ok(Self {
            encoder_a: make(MlpSpec::new(enc(d_r + classes, 2 * c.d_a), act, id)?)?,
            encoder_z: make(MlpSpec::new(enc(d_z_obs + d_r + classes, 2 * c.d_z), act, id)?)?,
            decoder_xr: make(MlpSpec::new(dec(c.d_a + c.d_z, d_r), act, id)?)?,
            decoder_xz: make(MlpSpec::new(dec(c.d_z, d_z_obs), act, id)?)?,
            decoder_y: make(MlpSpec::new(dec(c.d_z + c.d_a, classes), act, OutputActivation::Softmax)?)?,
            config,
            data_dims: (d_z_obs, d_r, classes),
        })
    }

    pub fn beta(&self) -> f64 {
        self.config.beta
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("beta must be > 0, got {beta}")));
        }
        self.config.beta = beta;
        Ok(())
    }

    fn nets(&self) -> [&Mlp; 5] {
        [&self.encoder_a, &self.encoder_z, &self.decoder_xr, &self.decoder_xz, &self.decoder_y]
    }

    /// Every parameter tensor, encoders first, in binding order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.nets().into_iter().flat_map(Mlp::tensors).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let Self {
            encoder_a,
            encoder_z,
            decoder_xr,
            decoder_xz,
            decoder_y,
            ..
        } = self;
        let mut out = encoder_a.tensors_mut();
        out.extend(encoder_z.tensors_mut());
        out.extend(decoder_xr.tensors_mut());
        out.extend(decoder_xz.tensors_mut());
        out.extend(decoder_y.tensors_mut());
        out
    }

    pub(crate) fn bind(&self, tape: &mut Tape) -> BoundEstimator {
        BoundEstimator {
            enc_a: self.encoder_a.bind(tape),
            enc_z: self.encoder_z.bind(tape),
            dec_xr: self.decoder_xr.bind(tape),
            dec_xz: self.decoder_xz.bind(tape),
            dec_y: self.decoder_y.bind(tape),
        }
    }

    /// Posteriors for a batch. The `a` encoder never sees `xz`.
    pub fn encode(&self, batch: &EstimatorBatch) -> Result<(GaussianPosterior, GaussianPosterior)> {
        let in_a = Tensor::concat_cols(&[&batch.xr, &batch.y_onehot])?;
        let in_z = Tensor::concat_cols(&[&batch.xz, &batch.xr, &batch.y_onehot])?;
        let (da, dz) = (self.config.d_a, self.config.d_z);
        let out_a = self.encoder_a.predict(&in_a)?;
        let out_z = self.encoder_z.predict(&in_z)?;
        Ok((
            GaussianPosterior::new(out_a.slice_cols(0, da)?, out_a.slice_cols(da, 2 * da)?)?,
            GaussianPosterior::new(out_z.slice_cols(0, dz)?, out_z.slice_cols(dz, 2 * dz)?)?,
        ))
    }

    pub(crate) fn build_elbo(
        &self,
        tape: &mut Tape,
        bound: &BoundEstimator,
        batch: &EstimatorBatch,
        noise: &ElboNoise,
    ) -> Result<ElboGraph> {
        let (da, dz) = (self.config.d_a, self.config.d_z);
        if noise.a.shape() != (batch.len(), da) {
            return Err(Error::dim("elbo noise a", noise.a.shape(), (batch.len(), da)));
        }
        if noise.z.shape() != (batch.len(), dz) {
            return Err(Error::dim("elbo noise z", noise.z.shape(), (batch.len(), dz)));
        }
        let xz = tape.constant(batch.xz.clone());
        let xr = tape.constant(batch.xr.clone());
        let yh = tape.constant(batch.y_onehot.clone());

        let in_a = tape.concat_cols(&[xr, yh])?;
        let out_a = bound.enc_a.forward(tape, in_a)?;
        let (mean_a, lv_a) = split_posterior(tape, out_a, da)?;
        let in_z = tape.concat_cols(&[xz, xr, yh])?;
        let out_z = bound.enc_z.forward(tape, in_z)?;
        let (mean_z, lv_z) = split_posterior(tape, out_z, dz)?;

        let a = sample_graph(tape, mean_a, lv_a, &noise.a)?;
        let z = sample_graph(tape, mean_z, lv_z, &noise.z)?;

        let az = tape.concat_cols(&[a, z])?;
        let xr_hat = bound.dec_xr.forward(tape, az)?;
        let recon_xr = half_sq_error(tape, xr_hat, xr)?;
        let xz_hat = bound.dec_xz.forward(tape, z)?;
        let recon_xz = half_sq_error(tape, xz_hat, xz)?;
        let za = tape.concat_cols(&[z, a])?;
        let logits = bound.dec_y.forward_logits(tape, za)?;
        let logp = tape.log_softmax(logits)?;
        let picked = tape.mul(logp, yh)?;
        let per_row = tape.sum_cols(picked)?;
        let mean_ll = tape.mean(per_row)?;
        let cross_entropy = tape.scale(mean_ll, -1.0)?;

        let kl_z = kl_graph(tape, mean_z, lv_z)?;
        let kl_a = kl_graph(tape, mean_a, lv_a)?;
        let kl_a_w = tape.scale(kl_a, self.config.beta)?;

        let mut loss = tape.add(recon_xr, recon_xz)?;
        for t in [cross_entropy, kl_z, kl_a_w] {
            loss = tape.add(loss, t)?;
        }
        Ok(ElboGraph {
            loss,
            mean_a,
            mean_z,
            recon_xr,
            recon_xz,
            cross_entropy,
            kl_z,
            kl_a,
        })
    }

    /// Negative ELBO averaged over the batch, with its breakdown.
    pub fn elbo_loss(&self, batch: &EstimatorBatch, noise: &ElboNoise) -> Result<(f64, ElboTerms)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let g = self.build_elbo(&mut tape, &bound, batch, noise)?;
        Ok((tape.value(g.loss).get(0, 0), g.terms(&tape, self.config.beta)))
    }

    /// Loss, breakdown and gradients in [`EstimatorModel::tensors`] order.
    pub fn elbo_loss_and_grads(
        &self,
        batch: &EstimatorBatch,
        noise: &ElboNoise,
    ) -> Result<(f64, ElboTerms, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let g = self.build_elbo(&mut tape, &bound, batch, noise)?;
        tape.backward(g.loss)?;
        let grads = collect_grads(&tape, &bound.vars());
        Ok((tape.value(g.loss).get(0, 0), g.terms(&tape, self.config.beta), grads))
    }

    /// Decoder-y class probabilities from given latents.
    pub fn decode_y(&self, a: &Tensor, z: &Tensor) -> Result<Tensor> {
        self.decoder_y.predict(&Tensor::concat_cols(&[z, a])?)
    }
}

/// How the downstream `A` is drawn from the `a` posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    #[default]
    Mean,
    /// One reparameterized sample per row from the given seed.
    Sample,
}

/// Latents for every row of `view`, `(A, Z)`. With [`LatentMode::Mean`]
/// the result is deterministic.
pub fn estimate_latents(
    model: &EstimatorModel,
    view: &TrainView<'_>,
    mode: LatentMode,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    view.assert_no_sensitive();
    let batch = EstimatorBatch::new(view.xz.clone(), view.xr.clone(), view.y, view.classes)?;
    let (pa, pz) = model.encode(&batch)?;
    match mode {
        LatentMode::Mean => Ok((pa.mean, pz.mean)),
        LatentMode::Sample => {
            let mut r = rng::derive(seed, 7);
            let noise = ElboNoise::sample(batch.len(), model.config.d_a, model.config.d_z, &mut r);
            Ok((reparameterize(&pa, &noise.a)?, reparameterize(&pz, &noise.z)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EstimatorTraining {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 256,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl EstimatorTraining {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("estimator epochs and batch size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("estimator lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Per-epoch averages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimatorEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub terms: ElboTerms,
    /// Mean MI estimate over the epoch's batches, when MI is on.
    pub mi: Option<f64>,
}

pub(crate) fn minibatches(n: usize, batch_size: usize, rng: &mut rng::Rng) -> Vec<Vec<usize>> {
    rng::permutation(n, rng)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Trains the estimator in place. With a discriminator, every minibatch
/// runs the adversarial alternation; otherwise one Adam step on the ELBO.
pub fn train_estimator(
    model: &mut EstimatorModel,
    view: &TrainView<'_>,
    cfg: &EstimatorTraining,
    mut mine: Option<&mut MineDiscriminator>,
) -> Result<Vec<EstimatorEpoch>> {
    view.assert_no_sensitive();
    cfg.validate()?;
    if view.is_empty() {
        return Err(Error::Config("cannot train the estimator on an empty set".into()));
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr))?;
    let mut order_rng = rng::derive(cfg.seed, 11);
    let mut noise_rng = rng::derive(cfg.seed, 12);
    let (da, dz) = (model.config.d_a, model.config.d_z);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut sum_terms = ElboTerms::default();
        let mut sum_loss = 0.0;
        let mut sum_mi = 0.0;
        let mut weight = 0.0;
        for rows in minibatches(view.len(), cfg.batch_size, &mut order_rng) {
            let batch = EstimatorBatch::from_view(view, &rows)?;
            let noise = ElboNoise::sample(batch.len(), da, dz, &mut noise_rng);
            let (loss, terms, mi) = match mine.as_deref_mut() {
                Some(disc) => {
                    let step = crate::mine::mi_adversarial_step(disc, model, &mut adam, &batch, &noise)?;
                    (step.loss, step.terms, Some(step.mi_estimate))
                }
                None => {
                    let (loss, terms, grads) = model.elbo_loss_and_grads(&batch, &noise)?;
                    adam.step(&mut model.tensors_mut(), &grads)?;
                    (loss, terms, None)
                }
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("estimator loss at epoch {epoch}")));
            }
            let w = batch.len() as f64;
            sum_loss += w * loss;
            sum_terms.recon_xr += w * terms.recon_xr;
            sum_terms.recon_xz += w * terms.recon_xz;
            sum_terms.cross_entropy += w * terms.cross_entropy;
            sum_terms.kl_z += w * terms.kl_z;
            sum_terms.kl_a += w * terms.kl_a;
            sum_terms.kl_a_weighted += w * terms.kl_a_weighted;
            sum_mi += w * mi.unwrap_or(0.0);
            weight += w;
        }
        let avg = |v: f64| v / weight;
        log.push(EstimatorEpoch {
            epoch,
            loss: avg(sum_loss),
            terms: ElboTerms {
                recon_xr: avg(sum_terms.recon_xr),
                recon_xz: avg(sum_terms.recon_xz),
                cross_entropy: avg(sum_terms.cross_entropy),
                kl_z: avg(sum_terms.kl_z),
                kl_a: avg(sum_terms.kl_a),
                kl_a_weighted: avg(sum_terms.kl_a_weighted),
            },
            mi: mine.is_some().then(|| avg(sum_mi)),
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d_a: usize, d_z: usize) -> EstimatorConfig {
        EstimatorConfig {
            d_a,
            d_z,
            hidden: 5,
            ..EstimatorConfig::default()
        }
    }

    fn toy_batch(n: usize, seed: u64) -> EstimatorBatch {
        let mut r = rng::seeded(seed);
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        EstimatorBatch::new(Tensor::randn(n, 3, &mut r), Tensor::randn(n, 2, &mut r), &y, 2).unwrap()
    }

    #[test]
    fn zero_encoders_give_prior_posteriors() {
        let m = EstimatorModel::zeros(cfg(2, 3), 3, 2, 2).unwrap();
        let (pa, pz) = m.encode(&toy_batch(6, 1)).unwrap();
        assert!(pa.mean.data().iter().chain(pa.log_var.data()).all(|&v| v == 0.0));
        assert!(pz.mean.data().iter().chain(pz.log_var.data()).all(|&v| v == 0.0));
        assert_eq!(kl_to_standard_normal(&pa), vec![0.0; 6]);
    }

    #[test]
    fn encoding_commutes_with_row_permutation() {
        let mut r = rng::seeded(2);
        let m = EstimatorModel::init(cfg(2, 3), 3, 2, 2, &mut r).unwrap();
        let b = toy_batch(5, 3);
        let perm = [3, 0, 4, 1, 2];
        let y: Vec<usize> = perm.iter().map(|&i| b.y_onehot.argmax_rows()[i]).collect();
        let pb = EstimatorBatch::new(b.xz.select_rows(&perm).unwrap(), b.xr.select_rows(&perm).unwrap(), &y, 2).unwrap();
        let (pa, _) = m.encode(&b).unwrap();
        let (qa, _) = m.encode(&pb).unwrap();
        assert_eq!(pa.mean.select_rows(&perm).unwrap(), qa.mean);
    }

    #[test]
    fn a_encoder_ignores_xz() {
        let mut r = rng::seeded(4);
        let m = EstimatorModel::init(cfg(2, 3), 3, 2, 2, &mut r).unwrap();
        let b = toy_batch(4, 5);
        let mut b2 = b.clone();
        b2.xz = b.xz.map(|v| v * 3.0 + 1.0);
        assert_eq!(m.encode(&b).unwrap().0, m.encode(&b2).unwrap().0);
        assert_ne!(m.encode(&b).unwrap().1, m.encode(&b2).unwrap().1);
    }

    #[test]
    fn reparameterize_examples() {
        let mean = Tensor::from_rows(&[[1.0, -2.0]]).unwrap();
        let post = GaussianPosterior::new(mean.clone(), Tensor::zeros(1, 2)).unwrap();
        assert_eq!(reparameterize(&post, &Tensor::zeros(1, 2)).unwrap(), mean);
        let n = Tensor::from_rows(&[[0.5, 0.25]]).unwrap();
        assert_eq!(reparameterize(&post, &n).unwrap().data(), &[1.5, -1.75]);
        assert!(reparameterize(&post, &Tensor::zeros(2, 2)).is_err());

        // d/d lv of sum(mean + exp(lv/2) * 2) at lv = 0 is 1
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::zeros(1, 3));
        let lv = tape.param(Tensor::zeros(1, 3));
        let s = sample_graph(&mut tape, m, lv, &Tensor::full(1, 3, 2.0)).unwrap();
        let loss = tape.sum(s).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(lv).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn kl_examples() {
        let p = GaussianPosterior::new(Tensor::scalar(1.0), Tensor::scalar(0.0)).unwrap();
        assert_eq!(kl_to_standard_normal(&p), vec![0.5]);
        let clamped = GaussianPosterior::new(Tensor::scalar(0.0), Tensor::scalar(50.0)).unwrap();
        assert_eq!(clamped.log_var.get(0, 0), LOG_VAR_MAX);
    }

    #[test]
    fn beta_scales_only_kl_a() {
        let mut r = rng::seeded(6);
        let mut m = EstimatorModel::init(cfg(2, 3), 3, 2, 2, &mut r).unwrap();
        let b = toy_batch(8, 7);
        let noise = ElboNoise::sample(8, 2, 3, &mut r);
        m.set_beta(1.0).unwrap();
        let (l1, t1) = m.elbo_loss(&b, &noise).unwrap();
        m.set_beta(2.0).unwrap();
        let (l2, t2) = m.elbo_loss(&b, &noise).unwrap();
        assert!((t2.kl_a_weighted - 2.0 * t1.kl_a_weighted).abs() < 1e-12);
        assert_eq!(
            (t1.recon_xr, t1.recon_xz, t1.cross_entropy, t1.kl_z, t1.kl_a),
            (t2.recon_xr, t2.recon_xz, t2.cross_entropy, t2.kl_z, t2.kl_a)
        );
        assert!((l2 - l1 - t1.kl_a_weighted).abs() < 1e-12);
        assert!((t1.total() - l1).abs() < 1e-12);
    }

    #[test]
    fn prior_posteriors_and_exact_reconstruction_leave_cross_entropy() {
        // zero model: posteriors are the prior and decoders output 0, so
        // zero-valued features reconstruct exactly
        let m = EstimatorModel::zeros(cfg(1, 1), 2, 2, 2).unwrap();
        let b = EstimatorBatch::new(Tensor::zeros(4, 2), Tensor::zeros(4, 2), &[0, 1, 1, 0], 2).unwrap();
        let (loss, t) = m.elbo_loss(&b, &ElboNoise::zeros(4, 1, 1)).unwrap();
        assert_eq!((t.recon_xr, t.recon_xz, t.kl_z, t.kl_a), (0.0, 0.0, 0.0, 0.0));
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn decoder_y_rows_are_distributions() {
        let mut r = rng::seeded(8);
        let m = EstimatorModel::init(cfg(2, 3), 3, 2, 4, &mut r).unwrap();
        let p = m.decode_y(&Tensor::randn(10, 2, &mut r), &Tensor::randn(10, 3, &mut r)).unwrap();
        for i in 0..10 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_shape_checked() {
        let m = EstimatorModel::zeros(cfg(2, 3), 3, 2, 2).unwrap();
        assert!(matches!(
            m.elbo_loss(&toy_batch(4, 0), &ElboNoise::zeros(4, 1, 3)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn training_mostly_decreases_loss_on_fixed_batch() {
        let b = toy_batch(64, 9);
        let mut decreased = 0;
        for seed in 0..10 {
            let mut r = rng::seeded(seed);
            let mut m = EstimatorModel::init(cfg(2, 2), 3, 2, 2, &mut r).unwrap();
            let noise = ElboNoise::zeros(64, 2, 2);
            let mut adam = AdamState::new(AdamConfig::with_lr(1e-2)).unwrap();
            let (first, _) = m.elbo_loss(&b, &noise).unwrap();
            for _ in 0..200 {
                let (_, _, g) = m.elbo_loss_and_grads(&b, &noise).unwrap();
                adam.step(&mut m.tensors_mut(), &g).unwrap();
            }
            let (last, _) = m.elbo_loss(&b, &noise).unwrap();
            if last < first {
                decreased += 1;
            }
        }
        assert!(decreased >= 10, "{decreased}/10");
    }
}
