//! Cross-entropy-method planning over a dynamics model.
//!
//! Candidate action sequences are rolled out through a [`Dynamics`] model and
//! ranked by a [`RewardFn`] evaluated on the final predicted state only,
//! always relative to the episode's initial state.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::sim::{self, Action, SceneState, StateVec, TaskSpec, ACTION_LIMIT};

pub type ActionSequence = Vec<[f64; 2]>;

/// Scores predicted final states against the fixed initial state.
pub trait RewardFn: Sync {
    fn rewards(&self, s0: &StateVec, finals: &[StateVec], instruction: &str) -> Vec<f64>;
}

impl<F> RewardFn for F
where
    F: Fn(&StateVec, &StateVec, &str) -> f64 + Sync,
{
    fn rewards(&self, s0: &StateVec, finals: &[StateVec], instruction: &str) -> Vec<f64> {
        finals.iter().map(|s| self(s0, s, instruction)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMode {
    /// Optimize one full-length sequence and execute it without replanning.
    OpenLoop,
    /// Plan `horizon` actions, execute `replan_every` of them, repeat.
    Mpc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub samples: usize,
    pub horizon: usize,
    pub cem_iters: usize,
    pub elite_frac: f64,
    pub mode: PlanMode,
    pub episode_len: usize,
    pub replan_every: usize,
    pub init_std: f64,
    pub std_floor: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig::sim()
    }
}

impl PlanConfig {
    /// 200 sequences of 20 actions, 3 CEM iterations, top 10% elites, open loop.
    pub fn sim() -> Self {
        PlanConfig {
            samples: 200,
            horizon: 20,
            cem_iters: 3,
            elite_frac: 0.1,
            mode: PlanMode::OpenLoop,
            episode_len: 20,
            replan_every: 20,
            init_std: 0.5 * ACTION_LIMIT,
            std_floor: 1e-3,
        }
    }

    /// 48 sequences of 5 actions, replanned every 5 steps over a 30-step episode.
    pub fn robot() -> Self {
        PlanConfig {
            samples: 48,
            horizon: 5,
            cem_iters: 3,
            mode: PlanMode::Mpc,
            episode_len: 30,
            replan_every: 5,
            ..PlanConfig::sim()
        }
    }

    pub fn n_elites(&self) -> usize {
        ((self.samples as f64 * self.elite_frac).ceil() as usize).min(self.samples)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.samples == 0 || self.cem_iters == 0 {
            return bad("samples and cem_iters must be positive");
        }
        if !(self.elite_frac > 0.0 && self.elite_frac <= 1.0) || self.n_elites() < 1 {
            return bad("elite fraction must select at least one sample");
        }
        if self.horizon > self.episode_len {
            return bad("planning horizon exceeds episode length");
        }
        if self.mode == PlanMode::OpenLoop && self.horizon != self.episode_len {
            return bad("open-loop planning needs horizon == episode_len");
        }
        if self.mode == PlanMode::Mpc && (self.replan_every == 0 || self.replan_every > self.horizon) {
            return bad("replan_every must be in 1..=horizon");
        }
        if self.std_floor <= 0.0 || self.init_std < self.std_floor {
            return bad("std floor must be positive and below the initial std");
        }
        Ok(())
    }
}

/// Per-timestep diagonal Gaussian over actions.
#[derive(Clone, Debug, PartialEq)]
pub struct CemDistribution {
    pub mean: Vec<[f64; 2]>,
    pub std: Vec<[f64; 2]>,
}

impl CemDistribution {
    pub fn new(horizon: usize, init_std: f64) -> Self {
        CemDistribution { mean: vec![[0.0; 2]; horizon], std: vec![[init_std; 2]; horizon] }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ActionSequence {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let mut a = [0.0; 2];
                for k in 0..2 {
                    let z: f64 = rng.sample(StandardNormal);
                    a[k] = (m[k] + s[k] * z).clamp(-ACTION_LIMIT, ACTION_LIMIT);
                }
                a
            })
            .collect()
    }

    /// Refits mean and std to the elites, flooring the std.
    pub fn refit(&mut self, elites: &[&ActionSequence], std_floor: f64) {
        let n = elites.len() as f64;
        for t in 0..self.mean.len() {
            for k in 0..2 {
                let mean = elites.iter().map(|e| e[t][k]).sum::<f64>() / n;
                let var = elites.iter().map(|e| (e[t][k] - mean).powi(2)).sum::<f64>() / n;
                self.mean[t][k] = mean;
                self.std[t][k] = var.sqrt().max(std_floor);
            }
        }
    }
}

/// Rolls every candidate forward in lock-step and returns the final states.
pub fn predict_finals(
    start: &StateVec,
    candidates: &[ActionSequence],
    dynamics: &dyn Dynamics,
) -> Vec<StateVec> {
    let mut states = vec![*start; candidates.len()];
    let horizon = candidates.iter().map(Vec::len).max().unwrap_or(0);
    assert!(candidates.iter().all(|c| c.len() == horizon), "ragged candidate batch");
    let mut actions = vec![[0.0; 2]; candidates.len()];
    for t in 0..horizon {
        for (a, c) in actions.iter_mut().zip(candidates) {
            *a = c[t];
        }
        dynamics.step_batch(&mut states, &actions);
    }
    states
}

/// Rewards of each candidate's predicted final state relative to `s0`.
///
/// `start` is where the rollouts begin; it differs from `s0` after the first
/// replanning round in MPC mode.
pub fn score_sequences(
    s0: &StateVec,
    start: &StateVec,
    candidates: &[ActionSequence],
    dynamics: &dyn Dynamics,
    reward: &dyn RewardFn,
    instruction: &str,
) -> Vec<f64> {
    let finals = predict_finals(start, candidates, dynamics);
    reward.rewards(s0, &finals, instruction)
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    pub actions: ActionSequence,
    pub score: f64,
    /// Best score observed after each CEM iteration.
    pub best_per_iter: Vec<f64>,
}

pub struct Planner<'a> {
    pub dynamics: &'a dyn Dynamics,
    pub reward: &'a dyn RewardFn,
    pub cfg: &'a PlanConfig,
}

impl<'a> Planner<'a> {
    pub fn new(dynamics: &'a dyn Dynamics, reward: &'a dyn RewardFn, cfg: &'a PlanConfig) -> Self {
        Planner { dynamics, reward, cfg }
    }

    /// Runs CEM for `horizon` steps from `start`, scoring against `s0`.
    pub fn plan<R: Rng + ?Sized>(
        &self,
        s0: &StateVec,
        start: &StateVec,
        horizon: usize,
        instruction: &str,
        rng: &mut R,
    ) -> PlanResult {
        let cfg = self.cfg;
        let mut dist = CemDistribution::new(horizon, cfg.init_std);
        let mut best: Option<(f64, ActionSequence)> = None;
        let mut best_per_iter = Vec::with_capacity(cfg.cem_iters);
        for _ in 0..cfg.cem_iters {
            let candidates: Vec<ActionSequence> =
                (0..cfg.samples).map(|_| dist.sample(rng)).collect();
            let scores =
                score_sequences(s0, start, &candidates, self.dynamics, self.reward, instruction);
            let mut order: Vec<usize> = (0..candidates.len()).collect();
            // Stable sort keeps ties in sampling order.
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            let top = order[0];
            if best.as_ref().is_none_or(|(s, _)| scores[top] > *s) {
                best = Some((scores[top], candidates[top].clone()));
            }
            best_per_iter.push(best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0));
            let elites: Vec<&ActionSequence> =
                order[..cfg.n_elites()].iter().map(|&i| &candidates[i]).collect();
            dist.refit(&elites, cfg.std_floor);
        }
        let (score, actions) = best.expect("at least one CEM iteration");
        PlanResult { actions, score, best_per_iter }
    }

    /// Plans and executes one episode in the real simulator.
    pub fn run_episode<R: Rng + ?Sized>(
        &self,
        task: &TaskSpec,
        instruction: &str,
        s0: &SceneState,
        rng: &mut R,
    ) -> EpisodeOutcome {
        let cfg = self.cfg;
        let anchor = s0.to_vector();
        let mut traj = Trajectory::new(*s0);
        let mut plan_calls = 0;
        match cfg.mode {
            PlanMode::OpenLoop => {
                let plan = self.plan(&anchor, &anchor, cfg.episode_len, instruction, rng);
                plan_calls += 1;
                for a in plan.actions {
                    traj.push(Action { delta: a });
                }
            }
            PlanMode::Mpc => {
                while traj.actions.len() < cfg.episode_len {
                    let current = traj.last().to_vector();
                    let plan = self.plan(&anchor, &current, cfg.horizon, instruction, rng);
                    plan_calls += 1;
                    let remaining = cfg.episode_len - traj.actions.len();
                    for a in plan.actions.into_iter().take(cfg.replan_every.min(remaining)) {
                        traj.push(Action { delta: a });
                    }
                }
            }
        }
        let success = sim::success_any(task, &traj.states);
        EpisodeOutcome { trajectory: traj, success, plan_calls }
    }
}

/// Executed states and actions; `states.len() == actions.len() + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<SceneState>,
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn new(s0: SceneState) -> Self {
        Trajectory { states: vec![s0], actions: Vec::new() }
    }

    pub fn last(&self) -> &SceneState {
        self.states.last().expect("trajectory always holds its initial state")
    }

    /// Steps the real simulator with a clipped action.
    pub fn push(&mut self, a: Action) {
        let a = a.clipped();
        let next = sim::step(self.last(), a);
        self.actions.push(a);
        self.states.push(next);
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    pub success: bool,
    pub plan_calls: usize,
}
