//! Diagonal Gaussian policy with a state-independent log standard deviation.
//!
//! Parameter layout: the mean network's parameters followed by one log_std
//! entry per action dimension.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use super::mlp::{MlpSpec, Tape};
use super::ParamVector;
use crate::error::{check_dim, Result};
use crate::rng::Rng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    net: MlpSpec,
    learn_log_std: bool,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, hidden: &[usize], action_dim: usize, learn_log_std: bool) -> Result<Self> {
        let mut widths = vec![obs_dim];
        widths.extend_from_slice(hidden);
        widths.push(action_dim);
        Ok(Self {
            net: MlpSpec::new(widths)?,
            learn_log_std,
        })
    }

    pub fn net(&self) -> &MlpSpec {
        &self.net
    }

    pub fn learns_log_std(&self) -> bool {
        self.learn_log_std
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count() + self.action_dim()
    }

    /// Widths used to tag serialized policy parameters: the mean network's
    /// widths with the log_std block appended.
    pub fn serial_widths(&self) -> Vec<usize> {
        let mut w = self.net.widths().to_vec();
        w.push(self.action_dim());
        w
    }

    pub fn init(&self, rng: &mut Rng, init_log_std: f64) -> ParamVector {
        let mut p = self.net.init(rng, 0.01).into_inner();
        p.extend(std::iter::repeat_n(init_log_std, self.action_dim()));
        ParamVector::new(p)
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params.split_at(self.net.param_count())
    }

    pub fn log_std(&self, params: &[f64]) -> Vec<f64> {
        self.split(params)
            .1
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    /// Batched means; read them from `tape.output()`.
    pub fn means_batch(&self, params: &[f64], obs: &[f64], batch: usize, tape: &mut Tape) -> Result<()> {
        check_dim("policy parameters", self.param_count(), params.len())?;
        self.net.forward_batch(self.split(params).0, obs, batch, tape)
    }

    pub fn mean(&self, params: &ParamVector, obs: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::default();
        self.means_batch(params.values(), obs, 1, &mut tape)?;
        Ok(tape.output().to_vec())
    }

    fn density(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
        let mut lp = -0.5 * action.len() as f64 * (2.0 * PI).ln();
        for i in 0..action.len() {
            let z = (action[i] - mean[i]) * (-log_std[i]).exp();
            lp -= 0.5 * z * z + log_std[i];
        }
        lp
    }

    /// Log densities of `actions` under the means stored in `tape`.
    pub fn log_probs_from_tape(&self, params: &[f64], tape: &Tape, actions: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.action_dim();
        check_dim("policy actions", tape.batch() * d, actions.len())?;
        check_dim("policy log-prob output", tape.batch(), out.len())?;
        let ls = self.log_std(params);
        for (b, o) in out.iter_mut().enumerate() {
            *o = Self::density(&actions[b * d..(b + 1) * d], &tape.output()[b * d..(b + 1) * d], &ls);
        }
        Ok(())
    }

    /// Adds `Σ_b weights_b · ∇_θ log π(actions_b | obs_b)` to `grad`, using
    /// the forward pass recorded in `tape`.
    pub fn accumulate_log_prob_grad(
        &self,
        params: &[f64],
        tape: &Tape,
        actions: &[f64],
        weights: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        let d = self.action_dim();
        let batch = tape.batch();
        check_dim("policy actions", batch * d, actions.len())?;
        check_dim("policy weights", batch, weights.len())?;
        check_dim("policy gradient", self.param_count(), grad.len())?;
        let (net_p, raw_ls) = self.split(params);
        let ls = self.log_std(params);
        let inv_var: Vec<f64> = ls.iter().map(|l| (-2.0 * l).exp()).collect();
        let means = tape.output();
        let mut upstream = vec![0.0; batch * d];
        let mut ls_grad = vec![0.0; d];
        for b in 0..batch {
            for i in 0..d {
                let diff = actions[b * d + i] - means[b * d + i];
                upstream[b * d + i] = weights[b] * diff * inv_var[i];
                ls_grad[i] += weights[b] * (diff * diff * inv_var[i] - 1.0);
            }
        }
        let (g_net, g_ls) = grad.split_at_mut(self.net.param_count());
        self.net.backward_batch(net_p, tape, &upstream, Some(g_net), None)?;
        if self.learn_log_std {
            for i in 0..d {
                if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_ls[i]) {
                    g_ls[i] += ls_grad[i];
                }
            }
        }
        Ok(())
    }

    /// Log density and its parameter gradient for one observation.
    pub fn log_prob(&self, params: &ParamVector, obs: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::default();
        self.means_batch(params.values(), obs, 1, &mut tape)?;
        let mut lp = [0.0];
        self.log_probs_from_tape(params.values(), &tape, action, &mut lp)?;
        let mut grad = vec![0.0; self.param_count()];
        self.accumulate_log_prob_grad(params.values(), &tape, action, &[1.0], &mut grad)?;
        Ok((lp[0], grad))
    }

    /// Draws one action per row of means in `tape`; returns unclamped
    /// actions and their log densities.
    pub fn sample_from_tape(&self, params: &[f64], tape: &Tape, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
        let d = self.action_dim();
        let ls = self.log_std(params);
        let means = tape.output();
        let mut actions = vec![0.0; means.len()];
        for (k, a) in actions.iter_mut().enumerate() {
            let eps: f64 = StandardNormal.sample(rng);
            *a = means[k] + ls[k % d].exp() * eps;
        }
        let log_probs = (0..tape.batch())
            .map(|b| Self::density(&actions[b * d..(b + 1) * d], &means[b * d..(b + 1) * d], &ls))
            .collect();
        (actions, log_probs)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn setup() -> (GaussianPolicy, ParamVector) {
        let pol = GaussianPolicy::new(3, &[5], 2, true).unwrap();
        let mut rng = Rng::seed_from_u64(1);
        let mut p = pol.init(&mut rng, -0.3).into_inner();
        let n = pol.net().param_count();
        p[n + 1] = 0.2;
        (pol, ParamVector::new(p))
    }

    #[test]
    fn density_at_mode() {
        let (pol, p) = setup();
        let obs = [0.1, -0.4, 0.9];
        let mean = pol.mean(&p, &obs).unwrap();
        let (lp, _) = pol.log_prob(&p, &obs, &mean).unwrap();
        let want = -(-0.3 + 0.2) - (2.0 * PI).ln();
        assert!((lp - want).abs() < 1e-12);
    }

    #[test]
    fn doubling_std_at_mode_lowers_log_prob_by_d_log_2() {
        let (pol, p) = setup();
        let obs = [0.5, 0.5, -0.5];
        let mean = pol.mean(&p, &obs).unwrap();
        let (lp1, _) = pol.log_prob(&p, &obs, &mean).unwrap();
        let mut q = p.clone();
        let n = pol.net().param_count();
        for i in 0..2 {
            q.values_mut()[n + i] += 2f64.ln();
        }
        let (lp2, _) = pol.log_prob(&q, &obs, &mean).unwrap();
        assert!((lp1 - lp2 - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_std_is_clamped_and_frozen_outside_range() {
        let pol = GaussianPolicy::new(1, &[], 1, true).unwrap();
        let p = ParamVector::new(vec![0.0, 0.0, 7.0]);
        assert_eq!(pol.log_std(p.values()), vec![LOG_STD_MAX]);
        let (_, g) = pol.log_prob(&p, &[1.0], &[3.0]).unwrap();
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn fixed_log_std_receives_no_gradient() {
        let pol = GaussianPolicy::new(2, &[4], 2, false).unwrap();
        let mut rng = Rng::seed_from_u64(5);
        let p = pol.init(&mut rng, 0.0);
        let (_, g) = pol.log_prob(&p, &[0.3, 0.1], &[1.0, -1.0]).unwrap();
        assert_eq!(&g[g.len() - 2..], &[0.0, 0.0]);
    }

    #[test]
    fn sampled_log_probs_match_density() {
        let (pol, p) = setup();
        let obs = [0.2, 0.2, 0.2, -1.0, 0.0, 1.0];
        let mut tape = Tape::default();
        pol.means_batch(p.values(), &obs, 2, &mut tape).unwrap();
        let mut rng = Rng::seed_from_u64(9);
        let (a, lp) = pol.sample_from_tape(p.values(), &tape, &mut rng);
        let mut check = [0.0; 2];
        pol.log_probs_from_tape(p.values(), &tape, &a, &mut check).unwrap();
        assert_eq!(lp, check.to_vec());
    }
}
