//! Deterministic classic-control simulators.
//!
//! Every transition is a pure function of the current state vector and the
//! action, so stored demonstrations can be replayed exactly.

mod acrobot;
mod cartpole;
mod mountain_car;
mod walker;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;

pub use cartpole::{THETA_THRESHOLD as CARTPOLE_THETA_THRESHOLD, X_THRESHOLD as CARTPOLE_X_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvKind {
    CartPole,
    Acrobot,
    MountainCar,
    /// Synthetic 1-D walker for diagnostics; not part of the benchmark.
    Walker,
}

impl EnvKind {
    pub const BENCHMARK: [EnvKind; 3] = [EnvKind::CartPole, EnvKind::Acrobot, EnvKind::MountainCar];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::CartPole => "cartpole",
            EnvKind::Acrobot => "acrobot",
            EnvKind::MountainCar => "mountaincar",
            EnvKind::Walker => "walker",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "cartpole" => Ok(EnvKind::CartPole),
            "acrobot" => Ok(EnvKind::Acrobot),
            "mountaincar" => Ok(EnvKind::MountainCar),
            "walker" => Ok(EnvKind::Walker),
            _ => Err(Error::Config(format!("unknown environment '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardRule {
    /// +1 for every step taken, including the failing one.
    SurvivalBonus,
    /// -1 for every step taken until the goal.
    StepCost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_count: usize,
    pub max_episode_steps: usize,
    pub reward_rule: RewardRule,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        let (state_dim, action_count, max_episode_steps, reward_rule) = match kind {
            EnvKind::CartPole => (4, 2, 200, RewardRule::SurvivalBonus),
            EnvKind::Acrobot => (6, 3, 500, RewardRule::StepCost),
            EnvKind::MountainCar => (2, 3, 200, RewardRule::StepCost),
            EnvKind::Walker => (1, 2, 50, RewardRule::StepCost),
        };
        EnvSpec {
            kind,
            state_dim,
            action_count,
            max_episode_steps,
            reward_rule,
        }
    }

    pub fn cartpole() -> Self {
        Self::new(EnvKind::CartPole)
    }

    pub fn acrobot() -> Self {
        Self::new(EnvKind::Acrobot)
    }

    pub fn mountain_car() -> Self {
        Self::new(EnvKind::MountainCar)
    }

    pub fn walker() -> Self {
        Self::new(EnvKind::Walker)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::new(name.parse()?))
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Samples a start state from the task's start distribution.
    pub fn reset(&self, seed: u64) -> EnvState {
        let mut rng = seed::rng(seed);
        let vector = match self.kind {
            EnvKind::CartPole => (0..4).map(|_| rng.gen_range(-0.05..=0.05)).collect(),
            EnvKind::MountainCar => vec![rng.gen_range(-0.6..=-0.4), 0.0],
            EnvKind::Acrobot => {
                let mut a = [0.0; 4];
                a.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..=0.1));
                acrobot::observe(a)
            }
            EnvKind::Walker => vec![rng.gen_range(-0.05..=0.05)],
        };
        EnvState {
            vector,
            step_index: 0,
            done: false,
        }
    }

    /// Advances `state` in place by one action.
    pub fn step(&self, state: &mut EnvState, action: usize) -> Result<StepResult> {
        if state.done {
            return Err(Error::EpisodeFinished { step: state.step_index });
        }
        if action >= self.action_count {
            return Err(Error::Index(format!(
                "action {action} for {} with {} actions",
                self.name(),
                self.action_count
            )));
        }
        if state.vector.len() != self.state_dim {
            return Err(Error::Shape(format!(
                "state of dimension {} for {} (dimension {})",
                state.vector.len(),
                self.name(),
                self.state_dim
            )));
        }
        let (next, terminal) = self.transition(&state.vector, action);
        state.step_index += 1;
        let done = terminal || state.step_index >= self.max_episode_steps;
        let reward = match self.reward_rule {
            RewardRule::SurvivalBonus => 1.0,
            RewardRule::StepCost => -1.0,
        };
        state.vector = next.clone();
        state.done = done;
        Ok(StepResult {
            next_state: next,
            reward,
            done,
            terminal,
        })
    }

    /// Pure dynamics: next state and whether a terminal condition holds.
    pub fn transition(&self, s: &[f64], action: usize) -> (Vec<f64>, bool) {
        match self.kind {
            EnvKind::CartPole => cartpole::step(s, action),
            EnvKind::MountainCar => mountain_car::step(s, action),
            EnvKind::Acrobot => acrobot::step(s, action),
            EnvKind::Walker => walker::step(s, action),
        }
    }

    /// Whether a state satisfies the task's goal (acrobot, mountain car, walker).
    pub fn reached_goal(&self, s: &[f64]) -> bool {
        match self.kind {
            EnvKind::CartPole => false,
            EnvKind::MountainCar => s[0] >= mountain_car::GOAL_POSITION,
            EnvKind::Acrobot => {
                let a = acrobot::angles(s);
                acrobot::is_goal(a[0], a[1])
            }
            EnvKind::Walker => s[0] >= walker::GOAL,
        }
    }

    /// Runs `episodes` fresh episodes and returns the mean undiscounted return.
    pub fn evaluate_policy<P>(&self, mut policy: P, episodes: usize, seed: u64) -> Result<f64>
    where
        P: FnMut(&[f64]) -> usize,
    {
        let returns = self.episode_returns(&mut policy, episodes, seed)?;
        Ok(returns.iter().sum::<f64>() / returns.len().max(1) as f64)
    }

    /// Per-episode returns; episode `i` starts from `reset(derive(seed, i))`.
    pub fn episode_returns<P>(&self, mut policy: P, episodes: usize, seed: u64) -> Result<Vec<f64>>
    where
        P: FnMut(&[f64]) -> usize,
    {
        if episodes == 0 {
            return Err(Error::Config("evaluation needs at least one episode".into()));
        }
        (0..episodes)
            .map(|i| {
                let mut state = self.reset(seed::derive(seed, i as u64));
                let mut total = 0.0;
                while !state.done {
                    let a = policy(&state.vector);
                    total += self.step(&mut state, a)?.reward;
                }
                Ok(total)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub vector: Vec<f64>,
    pub step_index: usize,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// Episode over, by termination or step cap.
    pub done: bool,
    /// Termination condition (failure or goal) reached, excluding the cap.
    pub terminal: bool,
}
