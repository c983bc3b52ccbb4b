//! The outer quality-diversity loop: gradient estimation, xNES branching,
//! archive insertion, search-policy walking, reward-model updates and
//! restarts.

use std::io::Write;

use crate::archive::{Elite, GridArchive, QdMetrics};
use crate::env::{PointWalker, DEFAULT_HORIZON};
use crate::error::{check_dim, Error, Result};
use crate::explorer::{VisitCountArchive, DEFAULT_RESOLUTION};
use crate::nn::{GaussianPolicy, ParamVector};
use crate::reward::{RewardConfig, RewardModel, RewardVariant, UpdateStats};
use crate::rng::{derive_seed, label, stream};
use crate::vppo::{compute_jacobian, evaluate, train_search_policy, JacobianEstimate, Objective, PpoConfig, NUM_CHANNELS};
use crate::xnes::CoeffDistribution;

/// Labels of per-iteration seed streams owned by the loop.
mod stage {
    pub const JACOBIAN: u64 = 100;
    pub const WALK: u64 = 101;
    pub const REWARD_UPDATE: u64 = 102;
}

#[derive(Debug, Clone, PartialEq)]
pub struct QdConfig {
    pub iterations: usize,
    pub n1: usize,
    pub n2: usize,
    pub branching: usize,
    pub sigma_g: f64,
    pub grid: usize,
    pub explorer_resolution: usize,
    pub eval_episodes: usize,
    pub horizon: usize,
    pub policy_hidden: Vec<usize>,
    pub log_std: f64,
    pub learn_log_std: bool,
    /// `None` trains against the true environment reward (expert runs).
    pub variant: Option<RewardVariant>,
    pub reward: RewardConfig,
    pub reward_minibatch: usize,
    pub ppo: PpoConfig,
    pub seed: u64,
}

impl Default for QdConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            n1: 4,
            n2: 4,
            branching: 8,
            sigma_g: 0.5,
            grid: 20,
            explorer_resolution: DEFAULT_RESOLUTION,
            eval_episodes: 4,
            horizon: DEFAULT_HORIZON,
            policy_hidden: vec![32, 32],
            log_std: -0.5,
            learn_log_std: false,
            variant: None,
            reward: RewardConfig::default(),
            reward_minibatch: 256,
            ppo: PpoConfig::default(),
            seed: 0,
        }
    }
}

impl QdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branching < 2 {
            return Err(Error::Config("branching population must be at least 2".into()));
        }
        if self.grid == 0 || self.explorer_resolution == 0 || self.eval_episodes == 0 || self.horizon == 0 {
            return Err(Error::Config("grid, explorer resolution, eval episodes and horizon must be positive".into()));
        }
        if !(self.sigma_g > 0.0) {
            return Err(Error::Config("sigma_g must be positive".into()));
        }
        if self.reward_minibatch == 0 {
            return Err(Error::Config("reward minibatch must be positive".into()));
        }
        Ok(())
    }

    pub fn policy(&self) -> Result<GaussianPolicy> {
        GaussianPolicy::new(PointWalker::OBS_DIM, &self.policy_hidden, PointWalker::ACTION_DIM, self.learn_log_std)
    }

    /// Evaluation start seeds, fixed for the whole run so archive fitness
    /// is a deterministic function of the parameters.
    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.eval_episodes as u64).map(|k| derive_seed(self.seed, &[label::EVAL, k])).collect()
    }
}

/// Offspring of `theta` along the blended gradient `Σ_c coeffs_c · grads_c`.
pub fn branch(theta: &ParamVector, grads: &[ParamVector], coeffs: &[f64]) -> Result<ParamVector> {
    check_dim("branch coefficients", grads.len(), coeffs.len())?;
    let mut out = theta.values().to_vec();
    for (g, &c) in grads.iter().zip(coeffs) {
        check_dim("branch gradient", out.len(), g.len())?;
        if c == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(g.values()) {
            *o += c * v;
        }
    }
    Ok(ParamVector::new(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub metrics: QdMetrics,
    /// Sum of archive improvements this iteration.
    pub improvement: f64,
    /// Mean objective return of the evaluated offspring.
    pub mean_offspring_objective: f64,
    /// Mean channel-0 base reward per step over the last walk rollout.
    pub mean_learned_reward: f64,
    pub reward_stats: UpdateStats,
    pub restarted: bool,
}

pub const METRICS_HEADER: &str =
    "iteration,qd_score,coverage,best,average,filled,improvement,mean_offspring_objective,mean_learned_reward,disc_loss,recon_loss,critic_gap,restarted";

impl IterationRecord {
    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.metrics.qd_score,
            self.metrics.coverage,
            opt(self.metrics.best),
            opt(self.metrics.average),
            self.metrics.filled,
            self.improvement,
            self.mean_offspring_objective,
            self.mean_learned_reward,
            self.reward_stats.disc_loss,
            self.reward_stats.recon_loss,
            self.reward_stats.gap,
            u8::from(self.restarted),
        )
    }
}

pub fn write_metrics_csv<W: Write>(mut w: W, log: &[IterationRecord]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in log {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub archive: GridArchive,
    pub log: Vec<IterationRecord>,
    pub explorer: VisitCountArchive,
    pub model: Option<RewardModel>,
    pub policy: GaussianPolicy,
}

impl RunOutput {
    pub fn final_metrics(&self) -> QdMetrics {
        self.archive.metrics()
    }
}

/// Runs the loop. `expert_features` must hold reward-model feature rows of
/// the demonstrations whenever `cfg.variant` is set.
pub fn run(cfg: &QdConfig, expert_features: Option<&[f64]>) -> Result<RunOutput> {
    run_with(cfg, expert_features, |_| {})
}

/// As [`run`], calling `on_iteration` after each logged iteration.
pub fn run_with(
    cfg: &QdConfig,
    expert_features: Option<&[f64]>,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<RunOutput> {
    cfg.validate()?;
    let env = PointWalker::new(cfg.horizon);
    let policy = cfg.policy()?;
    let mut model = match cfg.variant {
        Some(v) => {
            let mut rng = stream(cfg.seed, &[label::REWARD_MODEL]);
            Some(RewardModel::new(v, cfg.reward.clone(), PointWalker::OBS_DIM, PointWalker::ACTION_DIM, &mut rng)?)
        }
        None => None,
    };
    if let Some(m) = &model {
        let x = expert_features.ok_or(Error::Empty("expert demonstrations"))?;
        if x.is_empty() || x.len() % m.feature_dim() != 0 {
            return Err(Error::DimensionMismatch {
                context: "expert feature rows",
                expected: m.feature_dim(),
                got: x.len() % m.feature_dim().max(1),
            });
        }
    }
    let mut archive = GridArchive::new(cfg.grid)?;
    let mut explorer = VisitCountArchive::new(cfg.explorer_resolution)?;
    let mut dist = CoeffDistribution::new(NUM_CHANNELS, cfg.sigma_g)?;
    let mut xnes_rng = stream(cfg.seed, &[label::XNES]);
    let mut restart_rng = stream(cfg.seed, &[label::RESTART]);
    let mut theta = policy.init(&mut stream(cfg.seed, &[label::POLICY_INIT]), cfg.log_std);
    let eval_seeds = cfg.eval_seeds();
    let mut log = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let it64 = it as u64;
        let objective = match &model {
            Some(m) => Objective::learned(m),
            None => Objective::true_reward(),
        };
        let jac: JacobianEstimate = compute_jacobian(
            &env,
            &policy,
            &cfg.ppo,
            &theta,
            cfg.n1,
            objective,
            &mut explorer,
            derive_seed(cfg.seed, &[stage::JACOBIAN, it64]),
        )?;

        let mut changed = false;
        let mut total_improvement = 0.0;
        let center = evaluate(&env, &policy, &theta, &eval_seeds, objective, &explorer)?;
        explorer.visit_all(&center.deltas)?;
        let ins = archive.insert(Elite {
            params: theta.clone(),
            fitness: center.true_return,
            measure: center.measure,
            learned_fitness: Some(center.objective_return),
        })?;
        changed |= ins.changed();
        total_improvement += ins.improvement;

        let samples = dist.sample(cfg.branching, &mut xnes_rng);
        let snapshot = explorer.clone();
        let mut evals = Vec::with_capacity(cfg.branching);
        for c in &samples.coeffs {
            let child = branch(&theta, &jac.grads, c)?;
            let e = evaluate(&env, &policy, &child, &eval_seeds, objective, &snapshot)?;
            evals.push((child, e));
        }
        let mut improvements = Vec::with_capacity(cfg.branching);
        let mut objective_sum = 0.0;
        for (child, e) in evals {
            explorer.visit_all(&e.deltas)?;
            objective_sum += e.objective_return;
            let ins = archive.insert(Elite {
                params: child,
                fitness: e.true_return,
                measure: e.measure,
                learned_fitness: Some(e.objective_return),
            })?;
            changed |= ins.changed();
            total_improvement += ins.improvement;
            improvements.push(ins.improvement);
        }
        dist.adapt(&samples.raw, &improvements)?;

        let mu = dist.mean();
        let weights = [mu[0].abs(), mu[1], mu[2]];
        let (walked, last) = train_search_policy(
            &env,
            &policy,
            &cfg.ppo,
            &theta,
            &weights,
            cfg.n2,
            objective,
            &mut explorer,
            derive_seed(cfg.seed, &[stage::WALK, it64]),
        )?;
        theta = walked;

        let mut mean_learned_reward = 0.0;
        let mut reward_stats = UpdateStats::default();
        if let Some(buf) = &last {
            mean_learned_reward = buf.base_rewards.iter().sum::<f64>() / buf.rows().max(1) as f64;
        }
        if let (Some(m), Some(buf)) = (model.as_mut(), &last) {
            let x = buf.features(m)?;
            let mut rng = stream(cfg.seed, &[stage::REWARD_UPDATE, it64]);
            reward_stats = m.update_epoch(expert_features.unwrap(), &x, cfg.reward_minibatch, &mut rng)?;
        }

        let restarted = !changed;
        if restarted {
            dist.reset();
            if let Some(e) = archive.sample_elite(&mut restart_rng) {
                theta = e.params.clone();
            }
        }

        let record = IterationRecord {
            iteration: it,
            metrics: archive.metrics(),
            improvement: total_improvement,
            mean_offspring_objective: objective_sum / cfg.branching as f64,
            mean_learned_reward,
            reward_stats,
            restarted,
        };
        on_iteration(&record);
        log.push(record);
    }
    Ok(RunOutput {
        archive,
        log,
        explorer,
        model,
        policy,
    })
}
