//! The PointWalker environment and the generic environment interface used by
//! the rollout machinery.
//!
//! PointWalker is a two-leg phase oscillator. Each leg advances its phase by an
//! amount set by the action, touches the ground while `sin(phase) < 0`, and
//! pushes the body forward by `0.5 * |cos(phase)|` while in contact. The
//! single-step measure is the pair of contact flags, so the episodic measure is
//! the fraction of time each leg spends on the ground.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use rand::{Rng as _, SeedableRng};

use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;

/// Number of behavior (measure) dimensions.
pub const MEASURE_DIM: usize = 2;

pub type Measure = [f64; MEASURE_DIM];

/// Result of one environment transition, as seen by the rollout machinery.
#[derive(Debug, Clone)]
pub struct Transition<S> {
    pub next_state: S,
    pub reward: f64,
    /// Single-step measure of the state the action was taken in.
    pub delta: Measure,
    /// Action after clamping to the environment's action box.
    pub applied_action: Vec<f64>,
    pub done: bool,
}

/// Episodic environment with a per-state measure proxy.
pub trait Environment: Sync {
    type State: Clone + Send + Sync;

    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&self, seed: u64) -> Self::State;
    fn observe(&self, state: &Self::State, out: &mut [f64]);
    fn step(&self, state: &Self::State, action: &[f64]) -> Result<Transition<Self::State>>;
}

pub const OMEGA_MIN: f64 = 0.05;
pub const OMEGA_MAX: f64 = 0.6;
pub const ACTION_COST: f64 = 0.05;
pub const DEFAULT_HORIZON: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub x: f64,
    pub phi: [f64; 2],
    pub contact: [bool; 2],
    pub t: usize,
}

impl EnvState {
    pub fn contact_flags(&self) -> Measure {
        [f64::from(u8::from(self.contact[0])), f64::from(u8::from(self.contact[1]))]
    }

    fn from_phases(x: f64, phi: [f64; 2], t: usize) -> Self {
        Self {
            x,
            phi,
            contact: [phi[0].sin() < 0.0, phi[1].sin() < 0.0],
            t,
        }
    }
}

/// Leg angular-velocity commands, clamped to `[-1, 1]` on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvAction {
    a: [f64; 2],
}

impl EnvAction {
    pub fn new(a1: f64, a2: f64) -> Result<Self> {
        if !a1.is_finite() || !a2.is_finite() {
            return Err(Error::NonFinite("action"));
        }
        Ok(Self {
            a: [a1.clamp(-1.0, 1.0), a2.clamp(-1.0, 1.0)],
        })
    }

    pub fn values(&self) -> [f64; 2] {
        self.a
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub true_reward: f64,
    pub delta: Measure,
}

/// Maps a phase into `[0, 2π)`.
pub fn wrap_phase(p: f64) -> f64 {
    let r = p.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone)]
pub struct PointWalker {
    horizon: usize,
}

impl Default for PointWalker {
    fn default() -> Self {
        Self::new(DEFAULT_HORIZON)
    }
}

impl PointWalker {
    pub const OBS_DIM: usize = 7;
    pub const ACTION_DIM: usize = 2;

    pub fn new(horizon: usize) -> Self {
        assert!(horizon > 0, "horizon must be positive");
        Self { horizon }
    }

    pub fn reset_state(&self, seed: u64) -> EnvState {
        let mut rng = Rng::seed_from_u64(seed);
        let phi = [
            wrap_phase(rng.random::<f64>() * TAU),
            wrap_phase(rng.random::<f64>() * TAU),
        ];
        EnvState::from_phases(0.0, phi, 0)
    }

    pub fn step_state(&self, state: &EnvState, action: EnvAction) -> Result<StepOutcome> {
        if state.t >= self.horizon {
            return Err(Error::TerminalState {
                t: state.t,
                horizon: self.horizon,
            });
        }
        let a = action.values();
        let delta = state.contact_flags();
        let v = 0.5 * (delta[0] * state.phi[0].cos().abs() + delta[1] * state.phi[1].cos().abs());
        let true_reward = v - ACTION_COST * (a[0] * a[0] + a[1] * a[1]);
        let mut phi = [0.0; 2];
        for i in 0..2 {
            let omega = OMEGA_MIN + (OMEGA_MAX - OMEGA_MIN) * (a[i] + 1.0) / 2.0;
            phi[i] = wrap_phase(state.phi[i] + omega);
        }
        Ok(StepOutcome {
            next_state: EnvState::from_phases(state.x + v, phi, state.t + 1),
            true_reward,
            delta,
        })
    }

    pub fn observation(&self, state: &EnvState) -> [f64; Self::OBS_DIM] {
        let c = state.contact_flags();
        [
            state.phi[0].sin(),
            state.phi[0].cos(),
            state.phi[1].sin(),
            state.phi[1].cos(),
            c[0],
            c[1],
            state.t as f64 / self.horizon as f64,
        ]
    }
}

impl Environment for PointWalker {
    type State = EnvState;

    fn obs_dim(&self) -> usize {
        Self::OBS_DIM
    }

    fn action_dim(&self) -> usize {
        Self::ACTION_DIM
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&self, seed: u64) -> EnvState {
        self.reset_state(seed)
    }

    fn observe(&self, state: &EnvState, out: &mut [f64]) {
        out.copy_from_slice(&self.observation(state));
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> Result<Transition<EnvState>> {
        check_dim("PointWalker action", Self::ACTION_DIM, action.len())?;
        let action = EnvAction::new(action[0], action[1])?;
        let out = self.step_state(state, action)?;
        Ok(Transition {
            done: out.next_state.t >= self.horizon,
            next_state: out.next_state,
            reward: out.true_reward,
            delta: out.delta,
            applied_action: action.values().to_vec(),
        })
    }
}

/// Componentwise mean of a sequence of single-step measures.
pub fn episodic_measure(deltas: &[Measure]) -> Result<Measure> {
    if deltas.is_empty() {
        return Err(Error::Empty("measure sequence"));
    }
    let mut sum = [0.0; MEASURE_DIM];
    for d in deltas {
        for (s, v) in sum.iter_mut().zip(d) {
            *s += v;
        }
    }
    let n = deltas.len() as f64;
    Ok(sum.map(|s| s / n))
}

/// One line of the trajectory debug dump:
/// `t,x,phi1,phi2,c1,c2,a1,a2,true_reward`.
pub fn trajectory_line(state: &EnvState, action: EnvAction, true_reward: f64) -> String {
    let c = state.contact_flags();
    let a = action.values();
    let mut line = String::new();
    let _ = write!(
        line,
        "{},{},{},{},{},{},{},{},{}",
        state.t, state.x, state.phi[0], state.phi[1], c[0], c[1], a[0], a[1], true_reward
    );
    line
}
