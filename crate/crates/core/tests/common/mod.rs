//! Oracles and experiment drivers shared by the integration tests and the
//! acceptance harness. Nothing here calls into the library code it checks
//! except to obtain the value under test.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use wqdil::archive::{Elite, GridArchive};
use wqdil::env::{Measure, PointWalker};
use wqdil::explorer::VisitCountArchive;
use wqdil::nn::{gradient_penalty, GaussianPolicy, MlpSpec, ParamVector};
use wqdil::qd::QdConfig;
use wqdil::reward::{wasserstein_critic_step, Net, RewardConfig, RewardKind, RewardModel, RewardVariant, UpdateStats};
use wqdil::rng::Rng;
use wqdil::vppo::{gae, ValueNet};

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so coordinates whose true
/// derivative is essentially zero do not divide rounding noise by zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Every network shape the library builds with default settings.
pub fn architectures() -> Vec<(String, MlpSpec)> {
    let mut out: Vec<(String, MlpSpec)> = Vec::new();
    let qd = QdConfig::default();
    let policy = qd.policy().unwrap();
    out.push(("policy mean".into(), policy.net().clone()));
    let critic = ValueNet::new(PointWalker::OBS_DIM, &qd.ppo.critic_hidden, 1e-3, &mut rng(0)).unwrap();
    out.push(("value critic".into(), critic.spec.clone()));
    for kind in RewardKind::ALL {
        let m = RewardModel::new(
            RewardVariant::new(kind, true),
            RewardConfig::default(),
            PointWalker::OBS_DIM,
            PointWalker::ACTION_DIM,
            &mut rng(0),
        )
        .unwrap();
        out.push((format!("{kind} discriminator"), m.discriminator().spec.clone()));
        if let (Some(e), Some(d)) = (m.encoder(), m.decoder()) {
            out.push((format!("{kind} encoder"), e.spec.clone()));
            out.push((format!("{kind} decoder"), d.spec.clone()));
        }
    }
    let mut seen = Vec::new();
    out.retain(|(_, s)| {
        let w = s.widths().to_vec();
        let fresh = !seen.contains(&w);
        seen.push(w);
        fresh
    });
    out
}

/// Parameters drawn around the library's initialization with nonzero
/// biases, so every layer is exercised.
pub fn random_params(spec: &MlpSpec, rng: &mut Rng) -> ParamVector {
    let mut p = spec.init(rng, 1.0).into_inner();
    for v in &mut p {
        *v += rng.random_range(-0.1..0.1);
    }
    ParamVector::new(p)
}

/// Max relative error of `⟨u, net(x)⟩` gradients against central
/// differences, over `coords` random parameter coordinates and every input
/// coordinate, for `draws` random (params, input, upstream) triples.
pub fn mlp_fd_error(spec: &MlpSpec, draws: usize, coords: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let params = random_params(spec, &mut r);
        let x = normals(&mut r, spec.input_dim());
        let u = normals(&mut r, spec.output_dim());
        let (pg, ig) = spec.grad(&params, &x, &u).unwrap();
        let value = |p: &ParamVector, x: &[f64]| -> f64 {
            spec.forward(p, x).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum()
        };
        for _ in 0..coords {
            let i = r.random_range(0..spec.param_count());
            let n = central(
                |v| {
                    let mut p = params.clone();
                    p.values_mut()[i] = v;
                    value(&p, &x)
                },
                params.values()[i],
            );
            worst = worst.max(rel_err(pg[i], n));
        }
        for j in 0..x.len() {
            let n = central(
                |v| {
                    let mut xx = x.clone();
                    xx[j] = v;
                    value(&params, &xx)
                },
                x[j],
            );
            worst = worst.max(rel_err(ig[j], n));
        }
    }
    worst
}

/// Same check for the parameter gradient of the input-gradient penalty,
/// which differentiates through the network's own input gradient.
pub fn penalty_fd_error(spec: &MlpSpec, draws: usize, coords: usize, center: f64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let batch = 3;
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let params = random_params(spec, &mut r);
        let pts = normals(&mut r, batch * spec.input_dim());
        let mut g = vec![0.0; spec.param_count()];
        gradient_penalty(spec, params.values(), &pts, batch, 10.0, center, &mut g).unwrap();
        for _ in 0..coords {
            let i = r.random_range(0..spec.param_count());
            let n = central(
                |v| {
                    let mut p = params.values().to_vec();
                    p[i] = v;
                    let mut sink = vec![0.0; p.len()];
                    gradient_penalty(spec, &p, &pts, batch, 10.0, center, &mut sink).unwrap().penalty
                },
                params.values()[i],
            );
            worst = worst.max(rel_err(g[i], n));
        }
    }
    worst
}

/// Gaussian policy log-density gradient, including the learned log std.
pub fn log_prob_fd_error(draws: usize, coords: usize, seed: u64) -> f64 {
    let qd = QdConfig::default();
    let policy = GaussianPolicy::new(PointWalker::OBS_DIM, &qd.policy_hidden, PointWalker::ACTION_DIM, true).unwrap();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let n_params = policy.param_count();
    for _ in 0..draws {
        let mut p = random_params(policy.net(), &mut r).into_inner();
        for _ in 0..policy.action_dim() {
            p.push(r.random_range(-1.5..0.5));
        }
        let params = ParamVector::new(p);
        let obs = normals(&mut r, policy.obs_dim());
        let act = normals(&mut r, policy.action_dim());
        let (_, g) = policy.log_prob(&params, &obs, &act).unwrap();
        let mut idx: Vec<usize> = (0..coords).map(|_| r.random_range(0..n_params)).collect();
        idx.extend(n_params - policy.action_dim()..n_params);
        for i in idx {
            let n = central(
                |v| {
                    let mut q = params.clone();
                    q.values_mut()[i] = v;
                    policy.log_prob(&q, &obs, &act).unwrap().0
                },
                params.values()[i],
            );
            worst = worst.max(rel_err(g[i], n));
        }
    }
    worst
}

// ---------------------------------------------------------------- explorer

/// Visit-count bonus computed from a plain list of visited cells.
pub fn bonus_oracle(visited: &[(usize, usize)], query: (usize, usize)) -> f64 {
    if visited.is_empty() {
        return 1.0;
    }
    let n = visited.iter().filter(|&&c| c == query).count() as f64;
    1.0 / (1.0 + n / visited.len() as f64)
}

pub fn cell_of(delta: &Measure, h: usize) -> (usize, usize) {
    let f = |v: f64| ((v * h as f64).floor() as usize).min(h - 1);
    (f(delta[0]), f(delta[1]))
}

/// Random visit sequences, with each bonus query compared against the
/// oracle. Returns `(max abs error, min bonus, max bonus)`.
pub fn bonus_sweep(sequences: usize, seed: u64) -> (f64, f64, f64) {
    let mut r = rng(seed);
    let h = 10;
    let mut worst: f64 = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let corners = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
    for _ in 0..sequences {
        let mut a = VisitCountArchive::new(h).unwrap();
        let mut visited = Vec::new();
        let len = r.random_range(0..12);
        let pick = |r: &mut Rng| -> Measure {
            if r.random_bool(0.5) {
                corners[r.random_range(0..4)]
            } else {
                [r.random(), r.random()]
            }
        };
        for _ in 0..len {
            let d = pick(&mut r);
            a.visit(&d).unwrap();
            visited.push(cell_of(&d, h));
        }
        let q = if !visited.is_empty() && r.random_bool(0.5) {
            let (i, j) = visited[r.random_range(0..visited.len())];
            [(i as f64 + 0.5) / h as f64, (j as f64 + 0.5) / h as f64]
        } else {
            pick(&mut r)
        };
        let b = a.bonus(&q);
        worst = worst.max((b - bonus_oracle(&visited, cell_of(&q, h))).abs());
        lo = lo.min(b);
        hi = hi.max(b);
    }
    (worst, lo, hi)
}

// ---------------------------------------------------------------- archive

/// Keep-the-best-per-cell reference: a map from cell to the highest fitness
/// offered there that also beat the floor.
#[derive(Default)]
pub struct ArchiveOracle {
    pub best: HashMap<(usize, usize), f64>,
}

impl ArchiveOracle {
    pub fn offer(&mut self, cell: (usize, usize), fitness: f64, floor: f64) {
        match self.best.get(&cell) {
            Some(&b) if fitness <= b => {}
            None if fitness <= floor => {}
            _ => {
                self.best.insert(cell, fitness);
            }
        }
    }

    pub fn qd_score(&self) -> f64 {
        let mut v: Vec<f64> = self.best.values().copied().collect();
        v.sort_by(f64::total_cmp);
        v.iter().sum()
    }
}

/// Random insertion sequence compared against the oracle after every
/// insertion. Returns `(all matched, metrics monotone)`.
pub fn archive_sweep(inserts: usize, grid: usize, seed: u64) -> (bool, bool) {
    let mut r = rng(seed);
    let mut a = GridArchive::new(grid).unwrap();
    let mut o = ArchiveOracle::default();
    let mut matched = true;
    let mut monotone = true;
    let (mut last_qd, mut last_cov) = (0.0, 0.0);
    for _ in 0..inserts {
        let m: Measure = if r.random_bool(0.1) {
            [r.random_range(0..2) as f64, r.random()]
        } else {
            [r.random(), r.random()]
        };
        let fitness = r.random_range(-5.0..20.0);
        a.insert(Elite {
            params: ParamVector::new(vec![fitness]),
            fitness,
            measure: m,
            learned_fitness: None,
        })
        .unwrap();
        let cell = cell_of(&m, grid);
        o.offer(cell, fitness, 0.0);
        let metrics = a.metrics();
        matched &= metrics.filled == o.best.len();
        matched &= (metrics.qd_score - o.qd_score()).abs() <= 1e-9 * o.qd_score().abs().max(1.0);
        for (&c, &f) in &o.best {
            matched &= a.get(c.0, c.1).is_some_and(|e| e.fitness == f && e.params.values()[0] == f);
        }
        monotone &= metrics.qd_score >= last_qd && metrics.coverage >= last_cov;
        last_qd = metrics.qd_score;
        last_cov = metrics.coverage;
    }
    (matched, monotone)
}

// ---------------------------------------------------------------- gae

/// GAE straight from its definition:
/// `A_t = Σ_{l≥0} (γλ)^l δ_{t+l}`, truncated at the first episode end.
pub fn gae_oracle(r: &[f64], v: &[f64], dones: &[bool], last: f64, gamma: f64, lam: f64) -> Vec<f64> {
    let t_len = r.len();
    let mut adv = vec![0.0; t_len];
    for (t, a) in adv.iter_mut().enumerate() {
        let mut coef = 1.0;
        for l in t..t_len {
            let next_v = if dones[l] {
                0.0
            } else if l + 1 < t_len {
                v[l + 1]
            } else {
                last
            };
            let delta = r[l] + gamma * next_v - v[l];
            *a += coef * delta;
            if dones[l] {
                break;
            }
            coef *= gamma * lam;
        }
    }
    adv
}

/// Max relative error of the library's GAE against the oracle over random
/// buffers of length up to `max_len`.
pub fn gae_sweep(buffers: usize, max_len: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..buffers {
        let t = r.random_range(1..=max_len);
        let rewards = normals(&mut r, t);
        let values = normals(&mut r, t);
        let dones: Vec<bool> = (0..t).map(|_| r.random_bool(0.1)).collect();
        let last = normal(&mut r);
        let gamma = r.random_range(0.8..1.0);
        let lam = r.random_range(0.0..=1.0);
        let (adv, ret) = gae(&rewards, &values, &dones, last, gamma, lam);
        let want = gae_oracle(&rewards, &values, &dones, last, gamma, lam);
        for i in 0..t {
            let scale = want[i].abs().max(1e-3);
            worst = worst.max((adv[i] - want[i]).abs() / scale);
            worst = worst.max((ret[i] - (want[i] + values[i])).abs() / (want[i] + values[i]).abs().max(1e-3));
        }
    }
    worst
}

// ---------------------------------------------------------------- critics

/// Trains the default-width critic on two 1-D point masses `d` apart
/// (expert at `d`, policy at 0). Returns `(final gap, mean ‖∇D‖)`.
pub fn point_mass_critic(d: f64, steps: usize, seed: u64) -> (f64, f64) {
    let cfg = RewardConfig::default();
    let mut r = rng(seed);
    let mut widths = vec![1];
    widths.extend(&cfg.hidden);
    widths.push(1);
    let mut critic = Net::critic(widths, cfg.lr, &mut r).unwrap();
    let n = 64;
    let z_e = vec![d; n];
    let z_pi = vec![0.0; n];
    let mut last = None;
    for _ in 0..steps {
        last = Some(wasserstein_critic_step(&mut critic, &z_e, &z_pi, n, cfg.lambda, cfg.gp_critic, &mut r).unwrap());
    }
    let s = last.unwrap();
    (s.gap, s.mean_grad_norm)
}

/// Fixed synthetic dataset: expert rows around `+shift`, policy rows around
/// `−shift` in every coordinate, with unit noise.
pub fn blob_dataset(rows: usize, dim: usize, shift: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let e = (0..rows * dim).map(|_| shift + normal(&mut r)).collect();
    let p = (0..rows * dim).map(|_| -shift + normal(&mut r)).collect();
    (e, p)
}

/// Population standard deviation of each full window of `w` values,
/// averaged.
pub fn mean_window_std(xs: &[f64], w: usize) -> f64 {
    let windows: Vec<f64> = xs
        .windows(w)
        .map(|win| {
            let m = win.iter().sum::<f64>() / w as f64;
            (win.iter().map(|x| (x - m).powi(2)).sum::<f64>() / w as f64).sqrt()
        })
        .collect();
    windows.iter().sum::<f64>() / windows.len().max(1) as f64
}

/// Per-step training objective of `kind` on minibatches drawn from a fixed
/// blob dataset: the discriminator's loss for GAIL, the critic objective
/// `λ·gap − penalty` for WAE-WGAIL.
pub fn objective_trace(kind: RewardKind, steps: usize, shift: f64, seed: u64) -> Vec<f64> {
    stats_trace(kind, steps, shift, seed)
        .iter()
        .map(|s| if kind.is_wasserstein() { -s.disc_loss } else { s.disc_loss })
        .collect()
}

/// Per-step update statistics of `kind` on minibatches of a fixed blob
/// dataset.
pub fn stats_trace(kind: RewardKind, steps: usize, shift: f64, seed: u64) -> Vec<UpdateStats> {
    let obs = PointWalker::OBS_DIM;
    let act = PointWalker::ACTION_DIM;
    let variant = RewardVariant::new(kind, false);
    let mut r = rng(seed);
    let mut model = RewardModel::new(variant, RewardConfig::default(), obs, act, &mut r).unwrap();
    let dim = model.feature_dim();
    let (e, p) = blob_dataset(1024, dim, shift, seed ^ 0x5eed);
    let n = 64;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut eb = Vec::with_capacity(n * dim);
        let mut pb = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let i = r.random_range(0..1024);
            let j = r.random_range(0..1024);
            eb.extend_from_slice(&e[i * dim..(i + 1) * dim]);
            pb.extend_from_slice(&p[j * dim..(j + 1) * dim]);
        }
        out.push(model.update(&eb, &pb, n, &mut r).unwrap());
    }
    out
}
