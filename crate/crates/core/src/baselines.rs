//! Comparison methods: behavior cloning, offline Q-learning, goal-state cost,
//! the privileged oracle reward and random actions.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lang::{Embedding, Encoder, EncoderMode, EMBED_DIM};
use crate::nn::{Activation, AdamState, Matrix, Mlp, MlpSpec, Standardizer};
use crate::seeding::{derive_seed, rng_for};
use crate::sim::{
    self, Action, SceneState, StateVec, TaskId, TaskSpec, ACTION_DIM, ACTION_LIMIT, DRAWER_MAX_EXT,
    FAUCET_MAX_ANGLE, MUG_RADIUS, STATE_DIM, TABLE_DEPTH, TABLE_WIDTH,
};

/// A closed-loop controller queried once per environment step.
pub trait Policy: Sync {
    fn act(&self, s0: &StateVec, s: &StateVec, instruction: &str, rng: &mut dyn rand::RngCore) -> Action;
}

/// Uniformly random actions.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn act(&self, _: &StateVec, _: &StateVec, _: &str, rng: &mut dyn rand::RngCore) -> Action {
        random_policy(rng)
    }
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R) -> Action {
    sim::random_action(rng)
}

/// Signed progress of the task's object from `s0`.
pub fn oracle_reward(task: TaskSpec) -> impl Fn(&StateVec, &StateVec, &str) -> f64 + Sync + Copy {
    move |s0: &StateVec, s: &StateVec, _: &str| {
        task.progress(&SceneState::from_vector(s0), &SceneState::from_vector(s))
    }
}

/// `s0` with the task's object displaced by twice the success threshold.
///
/// Every other coordinate, the end effector included, keeps its initial value.
pub fn goal_state(task: TaskSpec, s0: &SceneState) -> SceneState {
    let mut g = *s0;
    let m = 2.0 * task.threshold;
    match task.id {
        TaskId::OpenDrawer => g.drawer_ext = (g.drawer_ext + m).min(DRAWER_MAX_EXT),
        TaskId::CloseDrawer => g.drawer_ext = (g.drawer_ext - m).max(0.0),
        TaskId::FaucetLeft => g.faucet_angle = (g.faucet_angle + m).min(FAUCET_MAX_ANGLE),
        TaskId::FaucetRight => g.faucet_angle = (g.faucet_angle - m).max(-FAUCET_MAX_ANGLE),
        TaskId::BlackMugRight => g.black_mug[0] = (g.black_mug[0] + m).min(TABLE_WIDTH - MUG_RADIUS),
        TaskId::WhiteMugDown => g.white_mug[1] = (g.white_mug[1] - m).max(MUG_RADIUS),
    }
    debug_assert!(g.white_mug[1] <= TABLE_DEPTH);
    g
}

/// Negative squared distance to a fixed goal over the whole state vector.
pub fn goal_state_cost(goal: &SceneState) -> impl Fn(&StateVec, &StateVec, &str) -> f64 + Sync + Copy {
    let g = goal.to_vector();
    move |_: &StateVec, s: &StateVec, _: &str| -sim::sub_sq(s, &g)
}

fn embeddings_for(encoder: &Encoder, d: &Dataset) -> HashMap<String, Embedding> {
    encoder.encode_all(d.episodes.iter().map(|e| e.instruction.as_str()))
}

fn state_norm(d: &Dataset) -> Standardizer {
    Standardizer::fit(STATE_DIM, d.episodes.iter().flat_map(|e| e.states.iter().map(|s| &s[..])))
}

// ---------------------------------------------------------------------------
// Behavior cloning

pub const BC_INPUT_DIM: usize = STATE_DIM + EMBED_DIM;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcTrainConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub state_noise_sigma: f64,
    pub eval_every: usize,
    pub encoder_mode: EncoderMode,
}

impl Default for BcTrainConfig {
    fn default() -> Self {
        BcTrainConfig {
            hidden: vec![128, 128, 128],
            dropout: 0.2,
            learning_rate: 1e-4,
            batch_size: 32,
            steps: 10_000,
            state_noise_sigma: 0.005,
            eval_every: 1000,
            encoder_mode: EncoderMode::Lexicon,
        }
    }
}

impl BcTrainConfig {
    pub fn net_spec(&self) -> MlpSpec {
        MlpSpec::relu_net(BC_INPUT_DIM, &self.hidden, ACTION_DIM, Activation::Linear, self.dropout)
    }
}

/// Maps (state, instruction) to an action; never sees `s0`.
#[derive(Clone, Debug)]
pub struct BcPolicy {
    pub net: Mlp,
    pub norm: Standardizer,
    pub encoder: Encoder,
}

impl BcPolicy {
    fn write_row(&self, s: &StateVec, emb: &Embedding, out: &mut [f64]) {
        self.norm.apply(s, &mut out[..STATE_DIM]);
        out[STATE_DIM..].copy_from_slice(emb);
    }

    /// Raw network output (unclipped) for a batch of states under one embedding each.
    pub fn predict(&self, rows: &[(StateVec, Embedding)]) -> Vec<[f64; 2]> {
        let mut x = Matrix::zeros(rows.len(), BC_INPUT_DIM);
        for (r, (s, e)) in rows.iter().enumerate() {
            self.write_row(s, e, x.row_mut(r));
        }
        let out = self.net.predict(&x).expect("bc input width");
        (0..rows.len()).map(|r| [out.row(r)[0], out.row(r)[1]]).collect()
    }
}

impl Policy for BcPolicy {
    fn act(&self, _s0: &StateVec, s: &StateVec, instruction: &str, _: &mut dyn rand::RngCore) -> Action {
        let a = self.predict(&[(*s, self.encoder.encode(instruction))])[0];
        Action { delta: a }.clipped()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcManifest {
    pub seed: u64,
    pub config: BcTrainConfig,
    pub dataset_hash: String,
    pub norm: Standardizer,
    pub best_step: usize,
    pub heldout_mse: f64,
    /// Held-out MSE of always predicting the mean training action.
    pub heldout_mean_baseline_mse: f64,
}

#[derive(Clone, Debug)]
pub struct BcTraining {
    pub policy: BcPolicy,
    pub manifest: BcManifest,
}

impl BcTraining {
    pub fn save(&self, dir: &Path, name: &str) -> Result<String> {
        artifact::save_model(dir, name, &self.policy.net, &self.manifest)
    }
}

pub fn load_lcbc(dir: &Path, name: &str) -> Result<(BcPolicy, BcManifest, String)> {
    let (net, manifest, hash): (Mlp, BcManifest, String) = artifact::load_model(dir, name)?;
    if net.input_dim() != BC_INPUT_DIM {
        return Err(Error::Shape { expected: BC_INPUT_DIM, got: net.input_dim() });
    }
    let encoder = Encoder::bundled(manifest.config.encoder_mode);
    Ok((BcPolicy { net, norm: manifest.norm.clone(), encoder }, manifest, hash))
}

type Triple<'a> = (StateVec, [f64; 2], &'a str);

fn action_mse(policy: &BcPolicy, data: &[Triple<'_>], emb: &HashMap<String, Embedding>) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let rows: Vec<_> = data.iter().map(|(s, _, l)| (*s, emb[*l])).collect();
    let pred = policy.predict(&rows);
    let se: f64 = pred
        .iter()
        .zip(data)
        .map(|(p, (_, a, _))| (p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2))
        .sum();
    se / (2.0 * data.len() as f64)
}

/// Mean-squared-error regression onto dataset actions.
pub fn train_lcbc(d: &Dataset, cfg: &BcTrainConfig, seed: u64) -> Result<BcTraining> {
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(Error::Config("bc: batch_size and eval_every must be positive".into()));
    }
    let (train_set, held_set) = d.split_holdout();
    let triples = |set: &Dataset| -> Vec<(StateVec, [f64; 2], String)> {
        set.episodes
            .iter()
            .flat_map(|e| (0..e.horizon()).map(move |t| (e.states[t], e.actions[t], e.instruction.clone())))
            .collect()
    };
    let train_owned = triples(&train_set);
    let held_owned = triples(&held_set);
    if train_owned.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train: Vec<Triple<'_>> = train_owned.iter().map(|(s, a, l)| (*s, *a, l.as_str())).collect();
    let held: Vec<Triple<'_>> = held_owned.iter().map(|(s, a, l)| (*s, *a, l.as_str())).collect();

    let encoder = Encoder::bundled(cfg.encoder_mode);
    let emb = embeddings_for(&encoder, d);
    let mut net = Mlp::new(cfg.net_spec(), derive_seed(seed, &[0]))?;
    // Start from the zero action, the mean of a uniform random dataset.
    net.zero_output_layer();
    let mut policy = BcPolicy { net, norm: state_norm(&train_set), encoder };
    let mean_action = {
        let n = train.len() as f64;
        let sx: f64 = train.iter().map(|t| t.1[0]).sum();
        let sy: f64 = train.iter().map(|t| t.1[1]).sum();
        [sx / n, sy / n]
    };
    let eval_set = if held.is_empty() { &train } else { &held };
    let baseline_mse = eval_set
        .iter()
        .map(|(_, a, _)| (a[0] - mean_action[0]).powi(2) + (a[1] - mean_action[1]).powi(2))
        .sum::<f64>()
        / (2.0 * eval_set.len() as f64);

    let mut rng = rng_for(seed, &[1]);
    let noise = Normal::new(0.0, cfg.state_noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut adam = AdamState::new(&policy.net.spec, cfg.learning_rate);
    let mut best = (policy.net.clone(), 0usize, action_mse(&policy, eval_set, &emb));
    let mut x = Matrix::zeros(cfg.batch_size, BC_INPUT_DIM);
    let mut target = Vec::with_capacity(cfg.batch_size * 2);
    for step in 1..=cfg.steps {
        target.clear();
        for r in 0..cfg.batch_size {
            let (mut s, a, l) = train[rng.random_range(0..train.len())];
            if cfg.state_noise_sigma > 0.0 {
                s.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            }
            policy.write_row(&s, &emb[l], x.row_mut(r));
            target.extend_from_slice(&a);
        }
        let (out, cache) = policy.net.forward(&x, true, &mut rng)?;
        let n = out.data.len() as f64;
        let grad = Matrix::from_vec(
            out.rows,
            out.cols,
            out.data.iter().zip(&target).map(|(o, t)| 2.0 * (o - t) / n).collect(),
        );
        let grads = policy.net.backward(&cache, &grad);
        adam.step(&mut policy.net.params, &grads);
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let mse = action_mse(&policy, eval_set, &emb);
            if mse <= best.2 {
                best = (policy.net.clone(), step, mse);
            }
        }
    }
    let (net, best_step, heldout_mse) = best;
    policy.net = net;
    let manifest = BcManifest {
        seed,
        config: cfg.clone(),
        dataset_hash: d.content_hash()?,
        norm: policy.norm.clone(),
        best_step,
        heldout_mse,
        heldout_mean_baseline_mse: baseline_mse,
    };
    Ok(BcTraining { policy, manifest })
}

// ---------------------------------------------------------------------------
// Offline Q-learning

pub const Q_INPUT_DIM: usize = 2 * STATE_DIM + EMBED_DIM + ACTION_DIM;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QTrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    /// Uniform action samples for the max in targets and at execution.
    pub action_samples: usize,
    pub target_every: usize,
    pub max_steps: usize,
    /// Bellman loss is averaged over windows of this many steps.
    pub plateau_window: usize,
    /// Stop once consecutive window means differ by less than this fraction.
    pub plateau_tol: f64,
    pub encoder_mode: EncoderMode,
}

impl Default for QTrainConfig {
    fn default() -> Self {
        QTrainConfig {
            hidden: vec![128, 128, 128],
            learning_rate: 1e-4,
            batch_size: 8,
            gamma: 0.9,
            action_samples: 100,
            target_every: 500,
            max_steps: 10_000,
            plateau_window: 1000,
            plateau_tol: 0.01,
            encoder_mode: EncoderMode::Lexicon,
        }
    }
}

impl QTrainConfig {
    pub fn net_spec(&self) -> MlpSpec {
        MlpSpec::relu_net(Q_INPUT_DIM, &self.hidden, 1, Activation::Linear, 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct QModel {
    pub net: Mlp,
    pub norm: Standardizer,
    pub encoder: Encoder,
    pub action_samples: usize,
}

impl QModel {
    fn write_row(&self, s0: &StateVec, s: &StateVec, emb: &Embedding, a: &[f64; 2], out: &mut [f64]) {
        self.norm.apply(s0, &mut out[..STATE_DIM]);
        self.norm.apply(s, &mut out[STATE_DIM..2 * STATE_DIM]);
        out[2 * STATE_DIM..2 * STATE_DIM + EMBED_DIM].copy_from_slice(emb);
        out[2 * STATE_DIM + EMBED_DIM] = a[0] / ACTION_LIMIT;
        out[2 * STATE_DIM + EMBED_DIM + 1] = a[1] / ACTION_LIMIT;
    }

    /// Q values of several actions in one state.
    pub fn q_values(&self, s0: &StateVec, s: &StateVec, emb: &Embedding, actions: &[[f64; 2]]) -> Vec<f64> {
        let mut x = Matrix::zeros(actions.len(), Q_INPUT_DIM);
        for (r, a) in actions.iter().enumerate() {
            self.write_row(s0, s, emb, a, x.row_mut(r));
        }
        self.net.predict(&x).expect("q input width").data
    }
}

/// Greedy action among `M_q` uniform samples; the first maximum wins.
pub fn lcrl_act<R: Rng + ?Sized>(q: &QModel, s0: &StateVec, s: &StateVec, instruction: &str, rng: &mut R) -> Action {
    let samples: Vec<[f64; 2]> = (0..q.action_samples.max(1)).map(|_| sim::random_action(rng).delta).collect();
    let values = q.q_values(s0, s, &q.encoder.encode(instruction), &samples);
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    Action { delta: samples[best] }
}

impl Policy for QModel {
    fn act(&self, s0: &StateVec, s: &StateVec, instruction: &str, rng: &mut dyn rand::RngCore) -> Action {
        lcrl_act(self, s0, s, instruction, rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QManifest {
    pub seed: u64,
    pub config: QTrainConfig,
    pub dataset_hash: String,
    pub norm: Standardizer,
    pub steps_run: usize,
    pub plateaued: bool,
    /// Mean Bellman loss per window.
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct QTraining {
    pub model: QModel,
    pub manifest: QManifest,
}

impl QTraining {
    pub fn save(&self, dir: &Path, name: &str) -> Result<String> {
        artifact::save_model(dir, name, &self.model.net, &self.manifest)
    }
}

pub fn load_lcrl(dir: &Path, name: &str) -> Result<(QModel, QManifest, String)> {
    let (net, manifest, hash): (Mlp, QManifest, String) = artifact::load_model(dir, name)?;
    if net.input_dim() != Q_INPUT_DIM {
        return Err(Error::Shape { expected: Q_INPUT_DIM, got: net.input_dim() });
    }
    let model = QModel {
        net,
        norm: manifest.norm.clone(),
        encoder: Encoder::bundled(manifest.config.encoder_mode),
        action_samples: manifest.config.action_samples,
    };
    Ok((model, manifest, hash))
}

/// Bootstrapped regression target for a transition into `next` at time `t + 1`.
///
/// Reaching the episode's last state pays 1 and ends the episode; every
/// earlier transition pays 0 and bootstraps from the target network.
pub fn q_target<R: Rng + ?Sized>(
    target: &QModel,
    s0: &StateVec,
    next: &StateVec,
    emb: &Embedding,
    terminal: bool,
    gamma: f64,
    rng: &mut R,
) -> f64 {
    if terminal {
        return 1.0;
    }
    if gamma == 0.0 {
        return 0.0;
    }
    let samples: Vec<[f64; 2]> = (0..target.action_samples.max(1)).map(|_| sim::random_action(rng).delta).collect();
    let best = target.q_values(s0, next, emb, &samples).into_iter().fold(f64::NEG_INFINITY, f64::max);
    gamma * best
}

/// Fitted Q-iteration on balanced batches of terminal and earlier transitions.
pub fn train_lcrl(d: &Dataset, cfg: &QTrainConfig, seed: u64) -> Result<QTraining> {
    if cfg.batch_size < 2 || cfg.target_every == 0 || cfg.plateau_window == 0 {
        return Err(Error::Config("q: batch_size >= 2, target_every and plateau_window > 0 required".into()));
    }
    if d.is_empty() || d.horizon == 0 {
        return Err(Error::EmptyDataset);
    }
    let encoder = Encoder::bundled(cfg.encoder_mode);
    let emb = embeddings_for(&encoder, d);
    let mut model = QModel {
        net: Mlp::new(cfg.net_spec(), derive_seed(seed, &[0]))?,
        norm: state_norm(d),
        encoder,
        action_samples: cfg.action_samples,
    };
    let mut target_net = model.clone();
    let mut rng = rng_for(seed, &[1]);
    let mut adam = AdamState::new(&model.net.spec, cfg.learning_rate);
    let mut x = Matrix::zeros(cfg.batch_size, Q_INPUT_DIM);
    let mut y = vec![0.0; cfg.batch_size];
    let mut loss_curve = Vec::new();
    let (mut window_loss, mut plateaued, mut steps_run) = (0.0, false, 0);
    for step in 1..=cfg.max_steps {
        for r in 0..cfg.batch_size {
            let e = &d.episodes[rng.random_range(0..d.len())];
            let horizon = e.horizon();
            // First half of the batch: final transitions; second half: earlier ones.
            let t = if r < cfg.batch_size / 2 || horizon == 1 {
                horizon - 1
            } else {
                rng.random_range(0..horizon - 1)
            };
            let l = &emb[&e.instruction];
            model.write_row(e.first(), &e.states[t], l, &e.actions[t], x.row_mut(r));
            y[r] = q_target(&target_net, e.first(), &e.states[t + 1], l, t + 1 == horizon, cfg.gamma, &mut rng);
        }
        let (out, cache) = model.net.forward(&x, true, &mut rng)?;
        let n = y.len() as f64;
        let mut loss = 0.0;
        let grad = Matrix::from_vec(
            out.rows,
            1,
            out.data
                .iter()
                .zip(&y)
                .map(|(o, t)| {
                    loss += (o - t).powi(2) / n;
                    2.0 * (o - t) / n
                })
                .collect(),
        );
        let grads = model.net.backward(&cache, &grad);
        adam.step(&mut model.net.params, &grads);
        window_loss += loss;
        steps_run = step;
        if step % cfg.target_every == 0 {
            target_net.net = model.net.clone();
        }
        if step % cfg.plateau_window == 0 {
            let mean = window_loss / cfg.plateau_window as f64;
            window_loss = 0.0;
            if let Some(prev) = loss_curve.last() {
                let prev: f64 = *prev;
                if (prev - mean).abs() <= cfg.plateau_tol * prev.abs().max(1e-12) {
                    loss_curve.push(mean);
                    plateaued = true;
                    break;
                }
            }
            loss_curve.push(mean);
        }
    }
    let manifest = QManifest {
        seed,
        config: cfg.clone(),
        dataset_hash: d.content_hash()?,
        norm: model.norm.clone(),
        steps_run,
        plateaued,
        loss_curve,
    };
    Ok(QTraining { model, manifest })
}

/// Executes a closed-loop policy for `steps` environment steps.
pub fn rollout_policy(
    policy: &dyn Policy,
    instruction: &str,
    s0: &SceneState,
    steps: usize,
    rng: &mut dyn rand::RngCore,
) -> crate::planner::Trajectory {
    let mut traj = crate::planner::Trajectory::new(*s0);
    let v0 = s0.to_vector();
    for _ in 0..steps {
        let s = traj.last().to_vector();
        let a = policy.act(&v0, &s, instruction, rng);
        traj.push(a);
    }
    traj
}
