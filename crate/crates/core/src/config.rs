//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Keys mirror [`QdConfig`]
//! fields; reward-model and PPO settings use `reward.` and `ppo.` prefixes.
//! `preset = full` swaps in the larger grid, iteration count and network
//! widths before any other key is applied, wherever it appears.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::qd::QdConfig;
use crate::reward::{RewardKind, RewardVariant};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub qd: QdConfig,
    /// Fittest elites considered when choosing demonstrators.
    pub pool_size: usize,
    pub num_demos: usize,
    /// Demonstration file for imitation runs; generated from an expert
    /// run when absent.
    pub demos: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            qd: QdConfig::default(),
            pool_size: 50,
            num_demos: 4,
            demos: None,
        }
    }
}

impl ExperimentConfig {
    pub fn full_preset() -> Self {
        let mut c = Self::default();
        c.qd.iterations = 2000;
        c.qd.grid = 50;
        c.qd.policy_hidden = vec![128, 128];
        c.qd.ppo.critic_hidden = vec![128, 128];
        c.qd.reward.hidden = vec![100, 100];
        c.pool_size = 500;
        c
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected `key = value`, found `{line}`")))?;
            entries.push((i + 1, k.trim(), v.trim()));
        }
        let mut cfg = Self::default();
        for &(ln, k, v) in &entries {
            if k == "preset" {
                cfg = match v {
                    "desk" => Self::default(),
                    "full" => Self::full_preset(),
                    _ => return Err(err(ln, format!("unknown preset `{v}`"))),
                };
            }
        }
        let mut kind: Option<Option<RewardKind>> = None;
        let mut bonus = None;
        for &(ln, k, v) in &entries {
            if k == "preset" {
                continue;
            }
            if k == "variant" {
                kind = Some(match v {
                    "expert" | "true" | "none" => None,
                    _ => Some(v.parse().map_err(|e: Error| err(ln, e.to_string()))?),
                });
                continue;
            }
            if k == "bonus" {
                bonus = Some(value(v).map_err(|m| err(ln, format!("{k}: {m}")))?);
                continue;
            }
            cfg.set(k, v).map_err(|m| err(ln, format!("{k}: {m}")))?;
        }
        match (kind, bonus) {
            (Some(Some(kind)), b) => cfg.qd.variant = Some(RewardVariant::new(kind, b.unwrap_or(true))),
            (Some(None), _) => cfg.qd.variant = None,
            (None, Some(_)) => {
                return Err(err(0, "`bonus` given without `variant`".into()));
            }
            (None, None) => {}
        }
        cfg.qd.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let q = &mut self.qd;
        match key {
            "iterations" => q.iterations = value(v)?,
            "n1" => q.n1 = value(v)?,
            "n2" => q.n2 = value(v)?,
            "branching" => q.branching = value(v)?,
            "sigma_g" => q.sigma_g = value(v)?,
            "grid" => q.grid = value(v)?,
            "explorer_resolution" => q.explorer_resolution = value(v)?,
            "eval_episodes" => q.eval_episodes = value(v)?,
            "horizon" => q.horizon = value(v)?,
            "policy_hidden" => q.policy_hidden = widths(v)?,
            "log_std" => q.log_std = value(v)?,
            "learn_log_std" => q.learn_log_std = value(v)?,
            "reward_minibatch" => q.reward_minibatch = value(v)?,
            "seed" => q.seed = value(v)?,
            "reward.latent_dim" => q.reward.latent_dim = value(v)?,
            "reward.hidden" => q.reward.hidden = widths(v)?,
            "reward.lambda" => q.reward.lambda = value(v)?,
            "reward.lr" => q.reward.lr = value(v)?,
            "reward.n_critic" => q.reward.n_critic = value(v)?,
            "reward.gp_classifier" => q.reward.gp_classifier = value(v)?,
            "reward.gp_critic" => q.reward.gp_critic = value(v)?,
            "ppo.n_envs" => q.ppo.n_envs = value(v)?,
            "ppo.rollout_len" => q.ppo.rollout_len = value(v)?,
            "ppo.gamma" => q.ppo.gamma = value(v)?,
            "ppo.gae_lambda" => q.ppo.gae_lambda = value(v)?,
            "ppo.lr" => q.ppo.lr = value(v)?,
            "ppo.critic_lr" => q.ppo.critic_lr = value(v)?,
            "ppo.minibatches" => q.ppo.minibatches = value(v)?,
            "ppo.epochs" => q.ppo.epochs = value(v)?,
            "ppo.clip" => q.ppo.clip = value(v)?,
            "ppo.critic_hidden" => q.ppo.critic_hidden = widths(v)?,
            "pool_size" => self.pool_size = value(v)?,
            "num_demos" => self.num_demos = value(v)?,
            "demos" => self.demos = Some(PathBuf::from(v)),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }
}

fn value<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| format!("`{v}`: {e}"))
}

/// `64x64`, `64,64` or `64 64`; empty means no hidden layers.
fn widths(v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(|c: char| c == 'x' || c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(value)
        .collect()
}
