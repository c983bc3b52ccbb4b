//! Learned reward models.
//!
//! Four variants share one feature layout, `x = (obs, action)` optionally
//! followed by the single-step measure `δ(s)`:
//!
//! * GAIL: a discriminator on `x`, reward `−log(1 − D(x))`.
//! * WAE-GAIL: a deterministic autoencoder whose latent codes are judged by
//!   a GAN discriminator, reward `−log(1 − D(Q(x)))`.
//! * WAE-WGAIL and mCWAE-WGAIL: the latent discriminator is a Wasserstein
//!   critic with a gradient penalty, reward `D_W(Q(x))`. The mC variant
//!   feeds `δ(s)` into the encoder.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::env::Measure;
use crate::error::{check_dim, Error, Result};
use crate::nn::{gradient_penalty, Adam, MlpSpec, ParamVector, Tape};
use crate::rng::Rng;

const D_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardKind {
    Gail,
    WaeGail,
    WaeWgail,
    McWaeWgail,
}

impl RewardKind {
    pub const ALL: [RewardKind; 4] = [Self::Gail, Self::WaeGail, Self::WaeWgail, Self::McWaeWgail];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gail => "gail",
            Self::WaeGail => "wae-gail",
            Self::WaeWgail => "wae-wgail",
            Self::McWaeWgail => "mcwae-wgail",
        }
    }

    pub fn is_wasserstein(self) -> bool {
        matches!(self, Self::WaeWgail | Self::McWaeWgail)
    }

    pub fn has_autoencoder(self) -> bool {
        self != Self::Gail
    }

    /// GAIL conditions its discriminator on `δ(s)`, as does mCWAE-WGAIL;
    /// the two WAE baselines do not.
    pub fn measure_conditioned(self) -> bool {
        matches!(self, Self::Gail | Self::McWaeWgail)
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown reward variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RewardVariant {
    pub kind: RewardKind,
    pub bonus_enabled: bool,
}

impl RewardVariant {
    pub fn new(kind: RewardKind, bonus_enabled: bool) -> Self {
        Self { kind, bonus_enabled }
    }

    pub fn measure_conditioned(&self) -> bool {
        self.kind.measure_conditioned()
    }

    /// Label such as `mcwae-wgail-bonus`.
    pub fn label(&self) -> String {
        if self.bonus_enabled {
            format!("{}-bonus", self.kind)
        } else {
            self.kind.name().to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub lambda: f64,
    pub lr: f64,
    pub n_critic: usize,
    /// Zero-centered penalty on the logits of classifier discriminators.
    pub gp_classifier: f64,
    /// One-centered Lipschitz penalty on Wasserstein critics.
    pub gp_critic: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            hidden: vec![64, 64],
            lambda: 1.0,
            lr: 3e-4,
            n_critic: 5,
            gp_classifier: 10.0,
            gp_critic: 50.0,
        }
    }
}

/// A network with its parameters and optimizer state.
#[derive(Debug, Clone)]
pub struct Net {
    pub spec: MlpSpec,
    pub params: ParamVector,
    adam: Adam,
}

impl Net {
    pub fn new(widths: Vec<usize>, lr: f64, rng: &mut Rng) -> Result<Self> {
        Self::with_output_scale(widths, lr, 1.0, rng)
    }

    /// A Wasserstein critic starts as a constant function. Its input
    /// gradient is then zero, so the one-centered penalty exerts no force
    /// until the first ascent step has oriented the critic along the data.
    /// A critic started with the wrong orientation can settle in the
    /// mirrored optimum, most visibly on one-dimensional inputs.
    pub fn critic(widths: Vec<usize>, lr: f64, rng: &mut Rng) -> Result<Self> {
        Self::with_output_scale(widths, lr, 0.0, rng)
    }

    pub fn with_output_scale(widths: Vec<usize>, lr: f64, output_scale: f64, rng: &mut Rng) -> Result<Self> {
        let spec = MlpSpec::new(widths)?;
        let params = spec.init(rng, output_scale);
        let adam = Adam::new(spec.param_count(), lr);
        Ok(Self { spec, params, adam })
    }

    fn forward(&self, x: &[f64], n: usize, tape: &mut Tape) -> Result<()> {
        self.spec.forward_batch(self.params.values(), x, n, tape)
    }

    fn step(&mut self, grad: &[f64]) -> Result<()> {
        self.adam.step(self.params.values_mut(), grad)
    }

    fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.spec.param_count()]
    }
}

/// Losses from one update call. `disc_loss` is the quantity the
/// discriminator or critic minimizes, penalty included; for a critic that
/// is `penalty − λ·gap`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub disc_loss: f64,
    pub recon_loss: f64,
    /// Encoder-side adversarial term (zero for GAIL).
    pub adv_loss: f64,
    pub penalty: f64,
    /// Mean expert score minus mean policy score under D or D_W.
    pub gap: f64,
}

impl UpdateStats {
    fn accumulate(&mut self, o: &UpdateStats, w: f64) {
        self.disc_loss += w * o.disc_loss;
        self.recon_loss += w * o.recon_loss;
        self.adv_loss += w * o.adv_loss;
        self.penalty += w * o.penalty;
        self.gap += w * o.gap;
    }
}

/// One Wasserstein critic step outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticStep {
    pub gap: f64,
    pub penalty: f64,
    pub mean_grad_norm: f64,
}

fn sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn interpolate(a: &[f64], b: &[f64], dim: usize, rng: &mut Rng) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for ((o, xa), xb) in out.chunks_exact_mut(dim).zip(a.chunks_exact(dim)).zip(b.chunks_exact(dim)) {
        let eps: f64 = rng.random();
        for i in 0..dim {
            o[i] = eps * xa[i] + (1.0 - eps) * xb[i];
        }
    }
    out
}

/// One ascent step of a Wasserstein critic on
/// `λ·(mean D(z_e) − mean D(z_π)) − c·mean(‖∇D(ẑ)‖ − 1)²`, with `ẑ` random
/// interpolates of paired samples.
#[allow(clippy::too_many_arguments)]
pub fn wasserstein_critic_step(
    critic: &mut Net,
    z_e: &[f64],
    z_pi: &[f64],
    n: usize,
    lambda: f64,
    gp_coef: f64,
    rng: &mut Rng,
) -> Result<CriticStep> {
    let dim = critic.spec.input_dim();
    check_dim("critic expert batch", n * dim, z_e.len())?;
    check_dim("critic policy batch", n * dim, z_pi.len())?;
    let mut grad = critic.zero_grad();
    let mut tape = Tape::default();
    let w = lambda / n as f64;

    critic.forward(z_e, n, &mut tape)?;
    let mean_e = tape.output().iter().sum::<f64>() / n as f64;
    critic.spec.backward_batch(critic.params.values(), &tape, &vec![-w; n], Some(&mut grad), None)?;
    critic.forward(z_pi, n, &mut tape)?;
    let mean_pi = tape.output().iter().sum::<f64>() / n as f64;
    critic.spec.backward_batch(critic.params.values(), &tape, &vec![w; n], Some(&mut grad), None)?;

    let hat = interpolate(z_e, z_pi, dim, rng);
    let gp = gradient_penalty(&critic.spec, critic.params.values(), &hat, n, gp_coef, 1.0, &mut grad)?;
    critic.step(&grad)?;
    Ok(CriticStep {
        gap: mean_e - mean_pi,
        penalty: gp.penalty,
        mean_grad_norm: gp.mean_grad_norm,
    })
}

/// One descent step of a logistic discriminator whose output is a logit.
/// `real` samples are labelled 1, `fake` samples 0; each group's loss is
/// weighted by `weight`. Returns `(bce, penalty, gap)` where `gap` is the
/// mean D on the first real group minus the mean D on fakes.
fn classifier_step(
    disc: &mut Net,
    real: &[&[f64]],
    fake: &[f64],
    n: usize,
    weight: f64,
    gp_coef: f64,
    rng: &mut Rng,
) -> Result<(f64, f64, f64)> {
    let dim = disc.spec.input_dim();
    let mut grad = disc.zero_grad();
    let mut tape = Tape::default();
    let mut bce = 0.0;
    let mut mean_real = 0.0;
    let mut upstream = vec![0.0; n];
    for (g, batch) in real.iter().enumerate() {
        disc.forward(batch, n, &mut tape)?;
        let mut s = 0.0;
        for (u, &l) in upstream.iter_mut().zip(tape.output()) {
            bce += weight * softplus(-l) / n as f64;
            *u = weight * (sigmoid(l) - 1.0) / n as f64;
            s += sigmoid(l);
        }
        if g == 0 {
            mean_real = s / n as f64;
        }
        disc.spec.backward_batch(disc.params.values(), &tape, &upstream, Some(&mut grad), None)?;
    }
    disc.forward(fake, n, &mut tape)?;
    let mut mean_fake = 0.0;
    for (u, &l) in upstream.iter_mut().zip(tape.output()) {
        bce += weight * softplus(l) / n as f64;
        *u = weight * sigmoid(l) / n as f64;
        mean_fake += sigmoid(l) / n as f64;
    }
    disc.spec.backward_batch(disc.params.values(), &tape, &upstream, Some(&mut grad), None)?;

    let hat = interpolate(real[0], fake, dim, rng);
    let gp = gradient_penalty(&disc.spec, disc.params.values(), &hat, n, gp_coef, 0.0, &mut grad)?;
    disc.step(&grad)?;
    Ok((bce, gp.penalty, mean_real - mean_fake))
}

#[derive(Debug, Clone)]
pub struct RewardModel {
    variant: RewardVariant,
    config: RewardConfig,
    obs_dim: usize,
    action_dim: usize,
    encoder: Option<Net>,
    decoder: Option<Net>,
    /// Discriminator on `x` for GAIL, on latents otherwise.
    disc: Net,
}

impl RewardModel {
    pub fn new(
        variant: RewardVariant,
        config: RewardConfig,
        obs_dim: usize,
        action_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(config.lambda > 0.0) || !(config.lr > 0.0) || config.latent_dim == 0 {
            return Err(Error::Config("reward model needs lambda > 0, lr > 0, latent_dim > 0".into()));
        }
        let x_dim = obs_dim + action_dim + if variant.measure_conditioned() { 2 } else { 0 };
        let widths = |i: usize, o: usize| {
            let mut w = vec![i];
            w.extend_from_slice(&config.hidden);
            w.push(o);
            w
        };
        let (encoder, decoder, disc) = if variant.kind.has_autoencoder() {
            let enc = Net::new(widths(x_dim, config.latent_dim), config.lr, rng)?;
            let dec = Net::new(widths(config.latent_dim, x_dim), config.lr, rng)?;
            let disc = if variant.kind.is_wasserstein() {
                Net::critic(widths(config.latent_dim, 1), config.lr, rng)?
            } else {
                Net::new(widths(config.latent_dim, 1), config.lr, rng)?
            };
            (Some(enc), Some(dec), disc)
        } else {
            (None, None, Net::new(widths(x_dim, 1), config.lr, rng)?)
        };
        Ok(Self {
            variant,
            config,
            obs_dim,
            action_dim,
            encoder,
            decoder,
            disc,
        })
    }

    pub fn variant(&self) -> RewardVariant {
        self.variant
    }

    pub fn config(&self) -> &RewardConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.obs_dim + self.action_dim + if self.variant.measure_conditioned() { 2 } else { 0 }
    }

    pub fn discriminator(&self) -> &Net {
        &self.disc
    }

    pub fn discriminator_mut(&mut self) -> &mut Net {
        &mut self.disc
    }

    pub fn encoder(&self) -> Option<&Net> {
        self.encoder.as_ref()
    }

    pub fn decoder(&self) -> Option<&Net> {
        self.decoder.as_ref()
    }

    pub fn is_finite(&self) -> bool {
        self.networks().iter().all(|n| n.params.is_finite())
    }

    fn networks(&self) -> Vec<&Net> {
        self.encoder.iter().chain(self.decoder.iter()).chain(std::iter::once(&self.disc)).collect()
    }

    /// Appends the feature vector of one step to `out`. Actions should be
    /// the clamped actions the environment applied.
    pub fn push_features(&self, obs: &[f64], action: &[f64], delta: &Measure, out: &mut Vec<f64>) -> Result<()> {
        check_dim("reward observation", self.obs_dim, obs.len())?;
        check_dim("reward action", self.action_dim, action.len())?;
        out.extend_from_slice(obs);
        out.extend_from_slice(action);
        if self.variant.measure_conditioned() {
            out.extend_from_slice(delta);
        }
        Ok(())
    }

    fn encode(&self, x: &[f64], n: usize, tape: &mut Tape) -> Result<()> {
        self.encoder.as_ref().expect("autoencoder variant").forward(x, n, tape)
    }

    /// Base rewards for `n` feature rows.
    pub fn rewards(&self, features: &[f64], n: usize) -> Result<Vec<f64>> {
        check_dim("reward features", n * self.feature_dim(), features.len())?;
        let mut tape = Tape::default();
        if self.variant.kind.has_autoencoder() {
            self.encode(features, n, &mut tape)?;
            let z = tape.output().to_vec();
            self.disc.forward(&z, n, &mut tape)?;
        } else {
            self.disc.forward(features, n, &mut tape)?;
        }
        Ok(tape
            .output()
            .iter()
            .map(|&s| {
                if self.variant.kind.is_wasserstein() {
                    s
                } else {
                    -(1.0 - sigmoid(s).clamp(D_CLAMP, 1.0 - D_CLAMP)).ln()
                }
            })
            .collect())
    }

    pub fn base_reward(&self, obs: &[f64], action: &[f64], delta: &Measure) -> Result<f64> {
        let mut x = Vec::with_capacity(self.feature_dim());
        self.push_features(obs, action, delta, &mut x)?;
        Ok(self.rewards(&x, 1)?[0])
    }

    /// One update on matched expert and policy minibatches of `n` rows.
    pub fn update(&mut self, expert: &[f64], policy: &[f64], n: usize, rng: &mut Rng) -> Result<UpdateStats> {
        if n == 0 {
            return Err(Error::Empty("reward update batch"));
        }
        check_dim("expert features", n * self.feature_dim(), expert.len())?;
        check_dim("policy features", n * self.feature_dim(), policy.len())?;
        match self.variant.kind {
            RewardKind::Gail => self.update_gail(expert, policy, n, rng),
            RewardKind::WaeGail => self.update_wae_gail(expert, policy, n, rng),
            RewardKind::WaeWgail | RewardKind::McWaeWgail => self.update_wae_wgail(expert, policy, n, rng),
        }
    }

    fn update_gail(&mut self, expert: &[f64], policy: &[f64], n: usize, rng: &mut Rng) -> Result<UpdateStats> {
        let (bce, penalty, gap) =
            classifier_step(&mut self.disc, &[expert], policy, n, 1.0, self.config.gp_classifier, rng)?;
        Ok(UpdateStats {
            disc_loss: bce + penalty,
            penalty,
            gap,
            ..UpdateStats::default()
        })
    }

    fn update_wae_gail(&mut self, expert: &[f64], policy: &[f64], n: usize, rng: &mut Rng) -> Result<UpdateStats> {
        let k = self.config.latent_dim;
        let lambda = self.config.lambda;
        let mut tape = Tape::default();
        self.encode(expert, n, &mut tape)?;
        let z_e = tape.output().to_vec();
        self.encode(policy, n, &mut tape)?;
        let z_pi = tape.output().to_vec();
        let prior: Vec<f64> = (0..n * k).map(|_| StandardNormal.sample(rng)).collect();
        // Prior and expert codes are "real", policy codes "fake".
        let (bce, penalty, gap) = classifier_step(
            &mut self.disc,
            &[&z_e, &prior],
            &z_pi,
            n,
            lambda,
            self.config.gp_classifier,
            rng,
        )?;
        // Both code sets are pushed toward what D calls real: −λ·log D(z).
        let push_real = |l: f64| (lambda * softplus(-l), lambda * (sigmoid(l) - 1.0));
        let (recon, adv) = self.autoencoder_step(expert, policy, n, push_real, push_real)?;
        Ok(UpdateStats {
            disc_loss: bce + penalty,
            recon_loss: recon,
            adv_loss: adv,
            penalty,
            gap,
        })
    }

    fn update_wae_wgail(&mut self, expert: &[f64], policy: &[f64], n: usize, rng: &mut Rng) -> Result<UpdateStats> {
        let lambda = self.config.lambda;
        let mut tape = Tape::default();
        self.encode(expert, n, &mut tape)?;
        let z_e = tape.output().to_vec();
        self.encode(policy, n, &mut tape)?;
        let z_pi = tape.output().to_vec();
        let mut last = None;
        for _ in 0..self.config.n_critic.max(1) {
            last = Some(wasserstein_critic_step(
                &mut self.disc,
                &z_e,
                &z_pi,
                n,
                lambda,
                self.config.gp_critic,
                rng,
            )?);
        }
        let c = last.unwrap();
        // Encoder and decoder shrink the critic's estimate of the latent
        // Wasserstein distance, λ·(mean D(z_e) − mean D(z_π)).
        let (recon, adv) =
            self.autoencoder_step(expert, policy, n, |s| (lambda * s, lambda), |s| (-lambda * s, -lambda))?;
        Ok(UpdateStats {
            disc_loss: c.penalty - lambda * c.gap,
            recon_loss: recon,
            adv_loss: adv,
            penalty: c.penalty,
            gap: c.gap,
        })
    }

    /// One descent step of encoder and decoder on the summed reconstruction
    /// losses plus an adversarial term. `adv_e` and `adv_pi` map a
    /// discriminator output to `(loss, d loss / d output)` per sample; both
    /// are averaged over the batch. Returns `(recon, adversarial)` losses.
    fn autoencoder_step(
        &mut self,
        expert: &[f64],
        policy: &[f64],
        n: usize,
        adv_e: impl Fn(f64) -> (f64, f64),
        adv_pi: impl Fn(f64) -> (f64, f64),
    ) -> Result<(f64, f64)> {
        let x_dim = self.feature_dim();
        let k = self.config.latent_dim;
        let m = 2 * n;
        let mut x = Vec::with_capacity(m * x_dim);
        x.extend_from_slice(expert);
        x.extend_from_slice(policy);
        let enc = self.encoder.as_mut().expect("autoencoder variant");
        let dec = self.decoder.as_mut().expect("autoencoder variant");

        let mut enc_tape = Tape::default();
        enc.forward(&x, m, &mut enc_tape)?;
        let z = enc_tape.output().to_vec();
        let mut dec_tape = Tape::default();
        dec.forward(&z, m, &mut dec_tape)?;
        let inv_n = 1.0 / n as f64;
        let mut recon = 0.0;
        let mut up = vec![0.0; m * x_dim];
        for ((u, xh), xv) in up.iter_mut().zip(dec_tape.output()).zip(&x) {
            let d = xh - xv;
            recon += d * d * inv_n;
            *u = 2.0 * d * inv_n;
        }
        let mut dec_grad = dec.zero_grad();
        let mut dz = vec![0.0; m * k];
        dec.spec
            .backward_batch(dec.params.values(), &dec_tape, &up, Some(&mut dec_grad), Some(&mut dz))?;

        let mut d_tape = Tape::default();
        self.disc.forward(&z, m, &mut d_tape)?;
        let mut adv = 0.0;
        let mut d_up = vec![0.0; m];
        for (b, (u, &s)) in d_up.iter_mut().zip(d_tape.output()).enumerate() {
            let (l, g) = if b < n { adv_e(s) } else { adv_pi(s) };
            adv += l * inv_n;
            *u = g * inv_n;
        }
        let mut dz_adv = vec![0.0; m * k];
        self.disc
            .spec
            .backward_batch(self.disc.params.values(), &d_tape, &d_up, None, Some(&mut dz_adv))?;
        for (a, b) in dz.iter_mut().zip(&dz_adv) {
            *a += b;
        }
        let mut enc_grad = enc.zero_grad();
        enc.spec.backward_batch(enc.params.values(), &enc_tape, &dz, Some(&mut enc_grad), None)?;
        enc.step(&enc_grad)?;
        dec.step(&dec_grad)?;
        Ok((recon, adv))
    }

    /// One pass over `policy` rows in minibatches of `minibatch`, pairing each
    /// minibatch with expert rows drawn uniformly with replacement from
    /// `expert_pool`. Returns the losses averaged over minibatches.
    pub fn update_epoch(
        &mut self,
        expert_pool: &[f64],
        policy: &[f64],
        minibatch: usize,
        rng: &mut Rng,
    ) -> Result<UpdateStats> {
        let dim = self.feature_dim();
        if expert_pool.is_empty() || expert_pool.len() % dim != 0 {
            return Err(Error::Empty("expert feature pool"));
        }
        if policy.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                context: "policy feature rows",
                expected: dim,
                got: policy.len() % dim,
            });
        }
        let n_expert = expert_pool.len() / dim;
        let n_policy = policy.len() / dim;
        let mut order: Vec<usize> = (0..n_policy).collect();
        for i in (1..n_policy).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut total = UpdateStats::default();
        let chunks: Vec<&[usize]> = order.chunks(minibatch.max(1)).collect();
        let w = 1.0 / chunks.len().max(1) as f64;
        for chunk in chunks {
            let n = chunk.len();
            let mut pb = Vec::with_capacity(n * dim);
            let mut eb = Vec::with_capacity(n * dim);
            for &i in chunk {
                pb.extend_from_slice(&policy[i * dim..(i + 1) * dim]);
                let j = rng.random_range(0..n_expert);
                eb.extend_from_slice(&expert_pool[j * dim..(j + 1) * dim]);
            }
            let s = self.update(&eb, &pb, n, rng)?;
            total.accumulate(&s, w);
        }
        Ok(total)
    }

    /// Checkpoint: a text header line naming the variant and sizes, then
    /// each network as a length-prefixed parameter blob.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "WQRM kind={} bonus={} obs={} action={} latent={} hidden={}",
            self.variant.kind,
            u8::from(self.variant.bonus_enabled),
            self.obs_dim,
            self.action_dim,
            self.config.latent_dim,
            self.config.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join("x"),
        )?;
        for net in self.networks() {
            let bytes = net.params.to_bytes(net.spec.widths());
            w.write_all(&(bytes.len() as u64).to_le_bytes())?;
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    /// Loads parameters saved by [`RewardModel::save`] into a model built
    /// with the same variant and configuration.
    pub fn load_params<R: Read>(&mut self, mut r: R) -> Result<()> {
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        let nl = data
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("missing reward model header".into()))?;
        let header = std::str::from_utf8(&data[..nl]).map_err(|e| Error::Format(e.to_string()))?;
        let mut expected = Vec::new();
        self.save(&mut expected)?;
        let want = std::str::from_utf8(&expected[..expected.iter().position(|&b| b == b'\n').unwrap()])
            .unwrap()
            .to_string();
        if header != want {
            return Err(Error::Format(format!("checkpoint header `{header}` does not match `{want}`")));
        }
        let mut pos = nl + 1;
        let nets: Vec<&mut Net> = self
            .encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .chain(std::iter::once(&mut self.disc))
            .collect();
        for net in nets {
            if data.len() < pos + 8 {
                return Err(Error::Format("truncated reward model checkpoint".into()));
            }
            let len = u64::from_le_bytes(data[pos..pos + 8].try_into().unwrap()) as usize;
            pos += 8;
            let blob = data
                .get(pos..pos + len)
                .ok_or_else(|| Error::Format("truncated reward model checkpoint".into()))?;
            let p = ParamVector::from_bytes(blob, net.spec.widths())?;
            check_dim("checkpoint parameters", net.spec.param_count(), p.len())?;
            net.params = p;
            pos += len;
        }
        Ok(())
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        self.save(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}
