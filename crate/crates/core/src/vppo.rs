//! Vectorized PPO over the objective channel and the measure channels.
//!
//! Channel 0 carries the (learned or true) objective reward, optionally
//! with the exploration bonus; channels 1 and 2 carry `δ_1(s)` and `δ_2(s)`.
//! Gradients of each channel are estimated by running a few PPO cycles from
//! a cloned policy and differencing parameters.

use rand::Rng as _;

use crate::env::{episodic_measure, Environment, Measure, MEASURE_DIM};
use crate::error::{check_dim, Error, Result};
use crate::explorer::VisitCountArchive;
use crate::nn::{Adam, GaussianPolicy, MlpSpec, ParamVector, Tape};
use crate::reward::RewardModel;
use crate::rng::{label, stream, Rng};

pub const NUM_CHANNELS: usize = 1 + MEASURE_DIM;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub n_envs: usize,
    pub rollout_len: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    pub critic_lr: f64,
    pub minibatches: usize,
    pub epochs: usize,
    pub clip: f64,
    pub critic_hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            n_envs: 32,
            rollout_len: 64,
            gamma: 0.99,
            gae_lambda: 0.95,
            lr: 3e-4,
            critic_lr: 1e-3,
            minibatches: 4,
            epochs: 4,
            clip: 0.2,
            critic_hidden: vec![32, 32],
        }
    }
}

/// What channel 0 pays: the true environment reward, or a learned reward
/// model's base reward; plus the exploration bonus when `bonus` is set.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub model: Option<&'a RewardModel>,
    pub bonus: bool,
}

impl<'a> Objective<'a> {
    pub fn true_reward() -> Self {
        Self { model: None, bonus: false }
    }

    pub fn learned(model: &'a RewardModel) -> Self {
        Self {
            model: Some(model),
            bonus: model.variant().bonus_enabled,
        }
    }

    /// Base rewards for rows of `(obs, applied action, delta)`.
    pub fn base_rewards(
        &self,
        obs: &[f64],
        actions: &[f64],
        deltas: &[Measure],
        true_rewards: &[f64],
    ) -> Result<Vec<f64>> {
        let Some(model) = self.model else {
            return Ok(true_rewards.to_vec());
        };
        let n = deltas.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let od = obs.len() / n;
        let ad = actions.len() / n;
        let mut x = Vec::with_capacity(n * model.feature_dim());
        for i in 0..n {
            model.push_features(&obs[i * od..(i + 1) * od], &actions[i * ad..(i + 1) * ad], &deltas[i], &mut x)?;
        }
        model.rewards(&x, n)
    }
}

/// Transitions laid out step-major: row `t * n_envs + i` is step `t` of
/// environment `i`.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub len: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub obs: Vec<f64>,
    /// Sampled, unclamped actions; log-probs refer to these.
    pub actions: Vec<f64>,
    /// Actions after the environment's clamp; reward models see these.
    pub applied_actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub dones: Vec<bool>,
    pub deltas: Vec<Measure>,
    pub true_rewards: Vec<f64>,
    /// Channel 0 base reward before the bonus.
    pub base_rewards: Vec<f64>,
    pub bonuses: Vec<f64>,
    /// Raw per-channel rewards; channel 0 is base plus bonus.
    pub rewards: [Vec<f64>; NUM_CHANNELS],
    /// Observations after the last step, for bootstrapping.
    pub last_obs: Vec<f64>,
}

impl RolloutBuffer {
    pub fn rows(&self) -> usize {
        self.n_envs * self.len
    }

    /// Reward-model feature rows `(obs, applied action, δ)` of every step.
    pub fn features(&self, model: &RewardModel) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(self.rows() * model.feature_dim());
        for r in 0..self.rows() {
            model.push_features(
                &self.obs[r * self.obs_dim..(r + 1) * self.obs_dim],
                &self.applied_actions[r * self.action_dim..(r + 1) * self.action_dim],
                &self.deltas[r],
                &mut x,
            )?;
        }
        Ok(x)
    }
}

/// Generalized advantage estimation for one trajectory segment. `dones[t]`
/// marks that step `t` ended its episode; `last_value` bootstraps past the
/// final step. Returns `(advantages, returns)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let t_len = rewards.len();
    let mut adv = vec![0.0; t_len];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..t_len).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Shifts to zero mean and, when the spread is nonzero, scales to unit
/// variance.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x -= mean;
        if std > 1e-12 {
            *x /= std;
        }
    }
}

/// Running standard deviation of per-environment discounted returns, used
/// to scale a reward channel.
#[derive(Debug, Clone)]
pub struct ReturnNormalizer {
    gamma: f64,
    returns: Vec<f64>,
    count: f64,
    mean: f64,
    m2: f64,
}

impl ReturnNormalizer {
    pub fn new(n_envs: usize, gamma: f64) -> Self {
        Self {
            gamma,
            returns: vec![0.0; n_envs],
            count: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    /// Folds a step-major reward block into the statistics.
    pub fn observe(&mut self, rewards: &[f64], dones: &[bool]) {
        let n = self.returns.len();
        for (row, done_row) in rewards.chunks_exact(n).zip(dones.chunks_exact(n)) {
            for i in 0..n {
                let r = self.gamma * self.returns[i] + row[i];
                self.count += 1.0;
                let d = r - self.mean;
                self.mean += d / self.count;
                self.m2 += d * (r - self.mean);
                self.returns[i] = if done_row[i] { 0.0 } else { r };
            }
        }
    }

    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            return 1.0;
        }
        (self.m2 / self.count + 1e-8).sqrt()
    }
}

/// A minibatch-ready PPO dataset.
#[derive(Debug, Clone, Default)]
pub struct PpoBatch {
    pub n: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
}

/// State-value network with its optimizer.
#[derive(Debug, Clone)]
pub struct ValueNet {
    pub spec: MlpSpec,
    pub params: ParamVector,
    adam: Adam,
}

impl ValueNet {
    pub fn new(obs_dim: usize, hidden: &[usize], lr: f64, rng: &mut Rng) -> Result<Self> {
        let mut widths = vec![obs_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let spec = MlpSpec::new(widths)?;
        let params = spec.init(rng, 1.0);
        let adam = Adam::new(spec.param_count(), lr);
        Ok(Self { spec, params, adam })
    }

    pub fn values(&self, obs: &[f64], n: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::default();
        self.spec.forward_batch(self.params.values(), obs, n, &mut tape)?;
        Ok(tape.output().to_vec())
    }
}

/// Clipped-surrogate PPO over `epochs` passes of `minibatches` shuffled
/// minibatches. Advantages are normalized over the whole batch first.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    policy: &GaussianPolicy,
    params: &mut ParamVector,
    policy_adam: &mut Adam,
    critic: &mut ValueNet,
    batch: &PpoBatch,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<PpoStats> {
    let n = batch.n;
    let od = policy.obs_dim();
    let ad = policy.action_dim();
    check_dim("PPO observations", n * od, batch.obs.len())?;
    check_dim("PPO actions", n * ad, batch.actions.len())?;
    check_dim("PPO log-probs", n, batch.old_log_probs.len())?;
    check_dim("PPO advantages", n, batch.advantages.len())?;
    check_dim("PPO returns", n, batch.returns.len())?;
    if n == 0 {
        return Ok(PpoStats::default());
    }
    let mut adv = batch.advantages.clone();
    normalize(&mut adv);
    let mb_count = cfg.minibatches.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = PpoStats::default();
    let mut updates = 0.0;
    let mut tape = Tape::default();
    let mut vtape = Tape::default();
    for _ in 0..cfg.epochs {
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for mb in 0..mb_count {
            let idx = &order[mb * n / mb_count..(mb + 1) * n / mb_count];
            let m = idx.len();
            let mut obs = Vec::with_capacity(m * od);
            let mut act = Vec::with_capacity(m * ad);
            for &i in idx {
                obs.extend_from_slice(&batch.obs[i * od..(i + 1) * od]);
                act.extend_from_slice(&batch.actions[i * ad..(i + 1) * ad]);
            }
            policy.means_batch(params.values(), &obs, m, &mut tape)?;
            let mut lp = vec![0.0; m];
            policy.log_probs_from_tape(params.values(), &tape, &act, &mut lp)?;
            let mut weights = vec![0.0; m];
            let mut loss = 0.0;
            let mut clipped = 0.0;
            for (k, &i) in idx.iter().enumerate() {
                let ratio = (lp[k] - batch.old_log_probs[i]).exp();
                let a = adv[i];
                let unclipped = ratio * a;
                let clip_r = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
                loss -= unclipped.min(clip_r * a) / m as f64;
                let active = !((a > 0.0 && ratio > 1.0 + cfg.clip) || (a < 0.0 && ratio < 1.0 - cfg.clip));
                if active {
                    // d(−ratio·A)/d log π, averaged.
                    weights[k] = -a * ratio / m as f64;
                } else {
                    clipped += 1.0;
                }
            }
            let mut grad = vec![0.0; policy.param_count()];
            policy.accumulate_log_prob_grad(params.values(), &tape, &act, &weights, &mut grad)?;
            policy_adam.step(params.values_mut(), &grad)?;

            critic.spec.forward_batch(critic.params.values(), &obs, m, &mut vtape)?;
            let mut up = vec![0.0; m];
            let mut vloss = 0.0;
            for (k, &i) in idx.iter().enumerate() {
                let d = vtape.output()[k] - batch.returns[i];
                vloss += 0.5 * d * d / m as f64;
                up[k] = d / m as f64;
            }
            let mut vgrad = vec![0.0; critic.spec.param_count()];
            critic.spec.backward_batch(critic.params.values(), &vtape, &up, Some(&mut vgrad), None)?;
            critic.adam.step(critic.params.values_mut(), &vgrad)?;

            stats.policy_loss += loss;
            stats.value_loss += vloss;
            stats.clip_fraction += clipped / m as f64;
            updates += 1.0;
        }
    }
    if updates > 0.0 {
        stats.policy_loss /= updates;
        stats.value_loss /= updates;
        stats.clip_fraction /= updates;
    }
    Ok(stats)
}

/// A PPO training session: persistent environments, a fresh critic,
/// fresh per-channel return normalizers and a fresh policy optimizer.
pub struct Session<'a, E: Environment> {
    env: &'a E,
    policy: &'a GaussianPolicy,
    cfg: &'a PpoConfig,
    states: Vec<E::State>,
    critic: ValueNet,
    adam: Adam,
    norms: Vec<ReturnNormalizer>,
    rng: Rng,
}

impl<'a, E: Environment> Session<'a, E> {
    pub fn new(env: &'a E, policy: &'a GaussianPolicy, cfg: &'a PpoConfig, seed: u64) -> Result<Self> {
        check_dim("policy observation width", env.obs_dim(), policy.obs_dim())?;
        check_dim("policy action width", env.action_dim(), policy.action_dim())?;
        if cfg.n_envs == 0 || cfg.rollout_len == 0 {
            return Err(Error::Config("n_envs and rollout_len must be positive".into()));
        }
        let mut rng = stream(seed, &[label::ENV_RESET]);
        let states = (0..cfg.n_envs).map(|_| env.reset(rng.random())).collect();
        let mut critic_rng = stream(seed, &[label::CRITIC_INIT]);
        let critic = ValueNet::new(policy.obs_dim(), &cfg.critic_hidden, cfg.critic_lr, &mut critic_rng)?;
        Ok(Self {
            env,
            policy,
            cfg,
            states,
            critic,
            adam: Adam::new(policy.param_count(), cfg.lr),
            norms: (0..NUM_CHANNELS).map(|_| ReturnNormalizer::new(cfg.n_envs, cfg.gamma)).collect(),
            rng,
        })
    }

    /// Collects `rollout_len` steps from every environment. Channel 0 is
    /// only evaluated when `need_objective`. Bonuses use the explorer as it
    /// was before the batch; the batch's visits are applied afterwards.
    pub fn collect(
        &mut self,
        params: &ParamVector,
        objective: Objective<'_>,
        need_objective: bool,
        explorer: &mut VisitCountArchive,
    ) -> Result<RolloutBuffer> {
        let n = self.cfg.n_envs;
        let t_len = self.cfg.rollout_len;
        let od = self.env.obs_dim();
        let ad = self.env.action_dim();
        let rows = n * t_len;
        let mut buf = RolloutBuffer {
            n_envs: n,
            len: t_len,
            obs_dim: od,
            action_dim: ad,
            obs: Vec::with_capacity(rows * od),
            actions: Vec::with_capacity(rows * ad),
            applied_actions: Vec::with_capacity(rows * ad),
            log_probs: Vec::with_capacity(rows),
            dones: Vec::with_capacity(rows),
            deltas: Vec::with_capacity(rows),
            true_rewards: Vec::with_capacity(rows),
            ..RolloutBuffer::default()
        };
        let mut obs = vec![0.0; n * od];
        let mut tape = Tape::default();
        for _ in 0..t_len {
            for (i, s) in self.states.iter().enumerate() {
                self.env.observe(s, &mut obs[i * od..(i + 1) * od]);
            }
            self.policy.means_batch(params.values(), &obs, n, &mut tape)?;
            let (actions, lps) = self.policy.sample_from_tape(params.values(), &tape, &mut self.rng);
            for i in 0..n {
                let tr = self.env.step(&self.states[i], &actions[i * ad..(i + 1) * ad])?;
                buf.applied_actions.extend_from_slice(&tr.applied_action);
                buf.deltas.push(tr.delta);
                buf.true_rewards.push(tr.reward);
                buf.dones.push(tr.done);
                self.states[i] = if tr.done { self.env.reset(self.rng.random()) } else { tr.next_state };
            }
            buf.obs.extend_from_slice(&obs);
            buf.actions.extend_from_slice(&actions);
            buf.log_probs.extend_from_slice(&lps);
        }
        buf.last_obs = vec![0.0; n * od];
        for (i, s) in self.states.iter().enumerate() {
            self.env.observe(s, &mut buf.last_obs[i * od..(i + 1) * od]);
        }

        buf.base_rewards = if need_objective {
            objective.base_rewards(&buf.obs, &buf.applied_actions, &buf.deltas, &buf.true_rewards)?
        } else {
            vec![0.0; rows]
        };
        buf.bonuses = if need_objective && objective.bonus {
            buf.deltas.iter().map(|d| explorer.bonus(d)).collect()
        } else {
            vec![0.0; rows]
        };
        buf.rewards[0] = buf.base_rewards.iter().zip(&buf.bonuses).map(|(b, x)| b + x).collect();
        for j in 0..MEASURE_DIM {
            buf.rewards[1 + j] = buf.deltas.iter().map(|d| d[j]).collect();
        }
        explorer.visit_all(&buf.deltas)?;
        Ok(buf)
    }

    /// PPO on the weighted sum of per-channel normalized rewards.
    pub fn update(&mut self, params: &mut ParamVector, buf: &RolloutBuffer, weights: &[f64; NUM_CHANNELS]) -> Result<PpoStats> {
        let n = buf.n_envs;
        let t_len = buf.len;
        let rows = buf.rows();
        let mut blended = vec![0.0; rows];
        for c in 0..NUM_CHANNELS {
            if weights[c] == 0.0 {
                continue;
            }
            self.norms[c].observe(&buf.rewards[c], &buf.dones);
            let k = weights[c] / self.norms[c].std();
            for (b, r) in blended.iter_mut().zip(&buf.rewards[c]) {
                *b += k * r;
            }
        }
        let values = self.critic.values(&buf.obs, rows)?;
        let last = self.critic.values(&buf.last_obs, n)?;
        let mut advantages = vec![0.0; rows];
        let mut returns = vec![0.0; rows];
        let mut r = vec![0.0; t_len];
        let mut v = vec![0.0; t_len];
        let mut d = vec![false; t_len];
        for i in 0..n {
            for t in 0..t_len {
                r[t] = blended[t * n + i];
                v[t] = values[t * n + i];
                d[t] = buf.dones[t * n + i];
            }
            let (a, ret) = gae(&r, &v, &d, last[i], self.cfg.gamma, self.cfg.gae_lambda);
            for t in 0..t_len {
                advantages[t * n + i] = a[t];
                returns[t * n + i] = ret[t];
            }
        }
        let batch = PpoBatch {
            n: rows,
            obs: buf.obs.clone(),
            actions: buf.actions.clone(),
            old_log_probs: buf.log_probs.clone(),
            advantages,
            returns,
        };
        ppo_update(self.policy, params, &mut self.adam, &mut self.critic, &batch, self.cfg, &mut self.rng)
    }

    /// `cycles` rounds of collect and update. Returns the last buffer.
    pub fn train(
        &mut self,
        params: &mut ParamVector,
        weights: &[f64; NUM_CHANNELS],
        cycles: usize,
        objective: Objective<'_>,
        explorer: &mut VisitCountArchive,
    ) -> Result<Option<RolloutBuffer>> {
        let mut last = None;
        for _ in 0..cycles {
            let buf = self.collect(params, objective, weights[0] != 0.0, explorer)?;
            self.update(params, &buf, weights)?;
            last = Some(buf);
        }
        Ok(last)
    }
}

fn unit(mut v: Vec<f64>) -> (ParamVector, bool) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        for x in &mut v {
            *x /= norm;
        }
        (ParamVector::new(v), true)
    } else {
        (ParamVector::new(vec![0.0; v.len()]), false)
    }
}

#[derive(Debug, Clone)]
pub struct JacobianEstimate {
    /// Estimated objective return per episode from the first channel-0
    /// rollout (mean step reward times horizon).
    pub f: f64,
    /// Mean single-step measure over that rollout.
    pub m: Measure,
    /// Unit-norm parameter-space directions for channels `f, m_1, m_2`.
    pub grads: [ParamVector; NUM_CHANNELS],
    /// False where the parameter difference was zero.
    pub nonzero: [bool; NUM_CHANNELS],
}

/// Per-channel gradient estimates by parameter differencing. Each channel
/// runs its own session of `n1` PPO cycles from a clone of `params`.
#[allow(clippy::too_many_arguments)]
pub fn compute_jacobian<E: Environment>(
    env: &E,
    policy: &GaussianPolicy,
    cfg: &PpoConfig,
    params: &ParamVector,
    n1: usize,
    objective: Objective<'_>,
    explorer: &mut VisitCountArchive,
    seed: u64,
) -> Result<JacobianEstimate> {
    let mut grads: [ParamVector; NUM_CHANNELS] = Default::default();
    let mut nonzero = [false; NUM_CHANNELS];
    let mut f = 0.0;
    let mut m = [0.0; MEASURE_DIM];
    for c in 0..NUM_CHANNELS {
        let mut weights = [0.0; NUM_CHANNELS];
        weights[c] = 1.0;
        let mut session = Session::new(env, policy, cfg, crate::rng::derive_seed(seed, &[c as u64]))?;
        let mut theta = params.clone();
        for cycle in 0..n1 {
            let buf = session.collect(&theta, objective, c == 0, explorer)?;
            if c == 0 && cycle == 0 {
                f = buf.rewards[0].iter().sum::<f64>() / buf.rows() as f64 * env.horizon() as f64;
                m = episodic_measure(&buf.deltas)?;
            }
            session.update(&mut theta, &buf, &weights)?;
        }
        if n1 == 0 && c == 0 {
            let buf = session.collect(&theta, objective, true, explorer)?;
            f = buf.rewards[0].iter().sum::<f64>() / buf.rows() as f64 * env.horizon() as f64;
            m = episodic_measure(&buf.deltas)?;
        }
        let diff: Vec<f64> = theta.values().iter().zip(params.values()).map(|(a, b)| a - b).collect();
        let (g, ok) = unit(diff);
        grads[c] = g;
        nonzero[c] = ok;
    }
    Ok(JacobianEstimate { f, m, grads, nonzero })
}

/// Walks the search policy for `n2` PPO cycles on the blended reward
/// `w_0·ℛ + Σ_j w_j·δ_j`. Returns the new parameters and the last rollout.
#[allow(clippy::too_many_arguments)]
pub fn train_search_policy<E: Environment>(
    env: &E,
    policy: &GaussianPolicy,
    cfg: &PpoConfig,
    params: &ParamVector,
    weights: &[f64; NUM_CHANNELS],
    n2: usize,
    objective: Objective<'_>,
    explorer: &mut VisitCountArchive,
    seed: u64,
) -> Result<(ParamVector, Option<RolloutBuffer>)> {
    let mut session = Session::new(env, policy, cfg, seed)?;
    let mut theta = params.clone();
    let last = session.train(&mut theta, weights, n2, objective, explorer)?;
    Ok((theta, last))
}

/// Outcome of deterministic evaluation episodes.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Mean channel-0 return (learned or true base reward plus bonus).
    pub objective_return: f64,
    pub true_return: f64,
    pub measure: Measure,
    /// Every single-step measure encountered, episode-major.
    pub deltas: Vec<Measure>,
    /// Per-episode channel-0 returns.
    pub episode_returns: Vec<f64>,
}

/// Runs one mean-action episode per seed, all in lockstep. Bonuses are
/// computed against `explorer` without modifying it.
pub fn evaluate<E: Environment>(
    env: &E,
    policy: &GaussianPolicy,
    params: &ParamVector,
    seeds: &[u64],
    objective: Objective<'_>,
    explorer: &VisitCountArchive,
) -> Result<Evaluation> {
    let n = seeds.len();
    if n == 0 {
        return Err(Error::Empty("evaluation seeds"));
    }
    let od = env.obs_dim();
    let horizon = env.horizon();
    let mut states: Vec<E::State> = seeds.iter().map(|&s| env.reset(s)).collect();
    let mut obs_log = vec![Vec::with_capacity(horizon * od); n];
    let mut act_log = vec![Vec::with_capacity(horizon * env.action_dim()); n];
    let mut delta_log: Vec<Vec<Measure>> = vec![Vec::with_capacity(horizon); n];
    let mut true_log = vec![Vec::with_capacity(horizon); n];
    let mut obs = vec![0.0; n * od];
    let mut tape = Tape::default();
    let mut live = vec![true; n];
    while live.iter().any(|&l| l) {
        for (i, s) in states.iter().enumerate() {
            env.observe(s, &mut obs[i * od..(i + 1) * od]);
        }
        policy.means_batch(params.values(), &obs, n, &mut tape)?;
        let ad = env.action_dim();
        for i in 0..n {
            if !live[i] {
                continue;
            }
            let tr = env.step(&states[i], &tape.output()[i * ad..(i + 1) * ad])?;
            obs_log[i].extend_from_slice(&obs[i * od..(i + 1) * od]);
            act_log[i].extend_from_slice(&tr.applied_action);
            delta_log[i].push(tr.delta);
            true_log[i].push(tr.reward);
            live[i] = !tr.done;
            states[i] = tr.next_state;
        }
    }
    let mut episode_returns = Vec::with_capacity(n);
    let mut true_return = 0.0;
    let mut measure = [0.0; MEASURE_DIM];
    for i in 0..n {
        let base = objective.base_rewards(&obs_log[i], &act_log[i], &delta_log[i], &true_log[i])?;
        let mut ret = base.iter().sum::<f64>();
        if objective.bonus {
            ret += delta_log[i].iter().map(|d| explorer.bonus(d)).sum::<f64>();
        }
        episode_returns.push(ret);
        true_return += true_log[i].iter().sum::<f64>() / n as f64;
        let m = episodic_measure(&delta_log[i])?;
        for j in 0..MEASURE_DIM {
            measure[j] += m[j] / n as f64;
        }
    }
    Ok(Evaluation {
        objective_return: episode_returns.iter().sum::<f64>() / n as f64,
        true_return,
        measure: measure.map(|v| v.clamp(0.0, 1.0)),
        deltas: delta_log.into_iter().flatten().collect(),
        episode_returns,
    })
}
