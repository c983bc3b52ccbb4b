//! Expert demonstrations: generating a true-reward expert archive, picking
//! a diverse set of demonstrators from it, recording their episodes and
//! reading and writing them as text.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::archive::{Elite, GridArchive};
use crate::env::{episodic_measure, EnvAction, EnvState, Measure, PointWalker, MEASURE_DIM};
use crate::error::{Error, Result};
use crate::nn::{GaussianPolicy, ParamVector};
use crate::qd::{run, QdConfig, RunOutput};
use crate::reward::RewardVariant;

pub const STATE_DIM: usize = 5;
pub const ACTION_DIM: usize = 2;
pub const HEADER: &str = "# state_dim=5 action_dim=2 delta_dim=2";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoStep {
    pub state: EnvState,
    /// Action as applied by the environment (clamped).
    pub action: [f64; ACTION_DIM],
    pub delta: Measure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub steps: Vec<DemoStep>,
    pub episode_return: f64,
    pub episodic_measure: Measure,
    /// Archive cell of the policy that produced it, when known.
    pub source_cell: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemoSet {
    pub demos: Vec<Demonstration>,
}

/// Runs the loop on the true environment reward with the bonus off.
pub fn generate_expert_archive(cfg: &QdConfig) -> Result<RunOutput> {
    let cfg = QdConfig {
        variant: None,
        ..cfg.clone()
    };
    run(&cfg, None)
}

/// Takes the `pool_size` fittest elites and greedily picks `k` of them that
/// are spread out in measure space: the fittest first, then repeatedly the
/// one farthest (by minimum distance) from those already chosen, breaking
/// ties by fitness.
pub fn select_demonstrators(
    archive: &GridArchive,
    pool_size: usize,
    k: usize,
) -> Result<Vec<((usize, usize), &Elite)>> {
    if archive.len() < k {
        return Err(Error::InsufficientElites {
            available: archive.len(),
            required: k,
        });
    }
    let mut pool: Vec<((usize, usize), &Elite)> = archive.elites().collect();
    pool.sort_by(|a, b| b.1.fitness.total_cmp(&a.1.fitness).then(a.0.cmp(&b.0)));
    pool.truncate(pool_size.max(k));
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; pool.len()];
    if k == 0 {
        return Ok(chosen);
    }
    chosen.push(pool[0]);
    taken[0] = true;
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (i, cand) in pool.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = chosen
                .iter()
                .map(|c| distance(&c.1.measure, &cand.1.measure))
                .fold(f64::INFINITY, f64::min);
            // Pool order is by descending fitness, so strict `>` keeps the
            // fitter candidate on ties.
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("pool holds at least k elites");
        taken[i] = true;
        chosen.push(pool[i]);
    }
    Ok(chosen)
}

pub fn distance(a: &Measure, b: &Measure) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Smallest pairwise measure distance within a selection.
pub fn min_pairwise_distance(measures: &[Measure]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..measures.len() {
        for j in i + 1..measures.len() {
            best = best.min(distance(&measures[i], &measures[j]));
        }
    }
    best
}

/// One deterministic mean-action episode from `start`.
pub fn record_episode(
    env: &PointWalker,
    policy: &GaussianPolicy,
    params: &ParamVector,
    start: EnvState,
) -> Result<Demonstration> {
    let mut state = start;
    let mut steps = Vec::with_capacity(env_horizon(env));
    let mut ret = 0.0;
    while state.t < env_horizon(env) {
        let mean = policy.mean(params, &env.observation(&state))?;
        let action = EnvAction::new(mean[0], mean[1])?;
        let out = env.step_state(&state, action)?;
        steps.push(DemoStep {
            state,
            action: action.values(),
            delta: out.delta,
        });
        ret += out.true_reward;
        state = out.next_state;
    }
    let deltas: Vec<Measure> = steps.iter().map(|s| s.delta).collect();
    Ok(Demonstration {
        episodic_measure: episodic_measure(&deltas)?,
        steps,
        episode_return: ret,
        source_cell: None,
    })
}

fn env_horizon(env: &PointWalker) -> usize {
    crate::env::Environment::horizon(env)
}

/// Records one demonstration per source. Each source is rolled out from
/// every start seed and the episode whose measure lies closest to the
/// elite's archived measure is kept.
pub fn record_demonstrations(
    env: &PointWalker,
    policy: &GaussianPolicy,
    sources: &[((usize, usize), &Elite)],
    start_seeds: &[u64],
) -> Result<DemoSet> {
    if start_seeds.is_empty() {
        return Err(Error::Empty("demonstration start seeds"));
    }
    let mut demos = Vec::with_capacity(sources.len());
    for (cell, elite) in sources {
        let mut best: Option<(f64, Demonstration)> = None;
        for &seed in start_seeds {
            let d = record_episode(env, policy, &elite.params, env.reset_state(seed))?;
            let dist = distance(&d.episodic_measure, &elite.measure);
            if best.as_ref().is_none_or(|(bd, _)| dist < *bd) {
                best = Some((dist, d));
            }
        }
        let mut d = best.unwrap().1;
        d.source_cell = Some(*cell);
        demos.push(d);
    }
    Ok(DemoSet { demos })
}

/// Selects `k` demonstrators from an expert run and records them on the
/// run's own evaluation seeds.
pub fn demos_from_expert(expert: &RunOutput, cfg: &QdConfig, pool_size: usize, k: usize) -> Result<DemoSet> {
    let env = PointWalker::new(cfg.horizon);
    let sources = select_demonstrators(&expert.archive, pool_size, k)?;
    record_demonstrations(&env, &expert.policy, &sources, &cfg.eval_seeds())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    fn of(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        Self {
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean,
            std: (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt(),
        }
    }
}

impl DemoSet {
    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    /// Reward-model feature rows of every demonstration step, laid out as
    /// [`crate::reward::RewardModel::push_features`] does for `variant`.
    pub fn features(&self, env: &PointWalker, variant: RewardVariant) -> Vec<f64> {
        let mut x = Vec::new();
        for d in &self.demos {
            for s in &d.steps {
                x.extend_from_slice(&env.observation(&s.state));
                x.extend_from_slice(&s.action);
                if variant.measure_conditioned() {
                    x.extend_from_slice(&s.delta);
                }
            }
        }
        x
    }

    pub fn length_summary(&self) -> Summary {
        Summary::of(&self.demos.iter().map(|d| d.steps.len() as f64).collect::<Vec<_>>())
    }

    pub fn return_summary(&self) -> Summary {
        Summary::of(&self.demos.iter().map(|d| d.episode_return).collect::<Vec<_>>())
    }

    /// Min/max/mean/std of episode length and return.
    pub fn stats_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>10} {:>10} {:>10} {:>10}", "", "min", "max", "mean", "std");
        for (name, m) in [("length", self.length_summary()), ("return", self.return_summary())] {
            let _ = writeln!(s, "{:<8} {:>10.2} {:>10.2} {:>10.2} {:>10.2}", name, m.min, m.max, m.mean, m.std);
        }
        s
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{HEADER}")?;
        for (id, d) in self.demos.iter().enumerate() {
            if let Some((r, c)) = d.source_cell {
                writeln!(w, "# source demo_id={id} row={r} col={c}")?;
            }
            for s in &d.steps {
                let c = s.state.contact_flags();
                writeln!(
                    w,
                    "{id},{},{},{},{},{},{},{},{},{},{}",
                    s.state.t, s.state.x, s.state.phi[0], s.state.phi[1], c[0], c[1], s.action[0], s.action[1], s.delta[0], s.delta[1]
                )?;
            }
        }
        Ok(())
    }

    pub fn save_file(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_file(path: &Path, env: &PointWalker) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path, env)
    }

    /// Parses the text format and checks every demonstration by replaying
    /// its actions through `env`. `path` only labels errors.
    pub fn parse(text: &str, path: &Path, env: &PointWalker) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: PathBuf::from(path),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            Some((_, h)) => return Err(err(1, format!("expected header `{HEADER}`, found `{h}`"))),
            None => return Err(err(1, "empty file".into())),
        }
        let mut demos: Vec<(Demonstration, usize)> = Vec::new();
        let mut sources: Vec<(usize, (usize, usize))> = Vec::new();
        for (i, raw) in lines {
            let ln = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(src) = parse_source(rest) {
                    sources.push(src);
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let want = 2 + STATE_DIM + ACTION_DIM + MEASURE_DIM;
            if fields.len() != want {
                return Err(err(ln, format!("expected {want} fields, found {}", fields.len())));
            }
            let id: usize = fields[0].trim().parse().map_err(|e| err(ln, format!("demo id: {e}")))?;
            let t: usize = fields[1].trim().parse().map_err(|e| err(ln, format!("step index: {e}")))?;
            let mut v = [0.0f64; 9];
            for (k, f) in fields[2..].iter().enumerate() {
                v[k] = f.trim().parse().map_err(|e| err(ln, format!("field {}: {e}", k + 3)))?;
                if !v[k].is_finite() {
                    return Err(err(ln, format!("field {} is not finite", k + 3)));
                }
            }
            let phi = [v[1], v[2]];
            let contact = [phi[0].sin() < 0.0, phi[1].sin() < 0.0];
            let state = EnvState { x: v[0], phi, contact, t };
            if state.contact_flags() != [v[3], v[4]] {
                return Err(err(ln, "contact flags disagree with leg phases".into()));
            }
            let delta = [v[7], v[8]];
            if delta != state.contact_flags() {
                return Err(err(ln, "single-step measure disagrees with contacts".into()));
            }
            let step = DemoStep {
                state,
                action: [v[5], v[6]],
                delta,
            };
            if id == demos.len() {
                if t != 0 {
                    return Err(err(ln, format!("demonstration {id} starts at t={t}")));
                }
                demos.push((
                    Demonstration {
                        steps: vec![step],
                        episode_return: 0.0,
                        episodic_measure: [0.0; MEASURE_DIM],
                        source_cell: None,
                    },
                    ln,
                ));
            } else if id + 1 == demos.len() {
                let d = &mut demos[id].0;
                if t != d.steps.len() {
                    return Err(err(ln, format!("expected t={}, found t={t}", d.steps.len())));
                }
                d.steps.push(step);
            } else {
                return Err(err(ln, format!("unexpected demonstration id {id}")));
            }
        }
        let mut out = Vec::with_capacity(demos.len());
        for (mut d, first_line) in demos {
            replay(env, &mut d).map_err(|m| err(first_line + m.0, m.1))?;
            out.push(d);
        }
        for (id, cell) in sources {
            if let Some(d) = out.get_mut(id) {
                d.source_cell = Some(cell);
            }
        }
        Ok(Self { demos: out })
    }
}

fn parse_source(rest: &str) -> Option<(usize, (usize, usize))> {
    let mut id = None;
    let mut row = None;
    let mut col = None;
    for tok in rest.split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            let v: usize = v.parse().ok()?;
            match k {
                "demo_id" => id = Some(v),
                "row" => row = Some(v),
                "col" => col = Some(v),
                _ => {}
            }
        }
    }
    Some((id?, (row?, col?)))
}

/// Replays stored actions from the first stored state, requiring every
/// later state to match bit for bit, and fills in return and measure.
/// Errors carry the offending step's offset from the first line.
fn replay(env: &PointWalker, d: &mut Demonstration) -> std::result::Result<(), (usize, String)> {
    let mut ret = 0.0;
    for i in 0..d.steps.len() {
        let s = d.steps[i];
        let action = EnvAction::new(s.action[0], s.action[1]).map_err(|e| (i, e.to_string()))?;
        if action.values() != s.action {
            return Err((i, "action outside [-1, 1]".into()));
        }
        let out = env.step_state(&s.state, action).map_err(|e| (i, e.to_string()))?;
        ret += out.true_reward;
        if let Some(next) = d.steps.get(i + 1) {
            if next.state != out.next_state {
                return Err((i + 1, "state does not follow from replaying the previous action".into()));
            }
        }
    }
    let deltas: Vec<Measure> = d.steps.iter().map(|s| s.delta).collect();
    d.episode_return = ret;
    d.episodic_measure = episodic_measure(&deltas).map_err(|e| (0, e.to_string()))?;
    Ok(())
}
