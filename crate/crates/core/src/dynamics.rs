use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{cosine_lr, Activation, AdamState, Matrix, Mlp, MlpSpec, Standardizer};
use crate::seeding::{derive_seed, rng_for};
use crate::sim::{self, Action, SceneState, StateVec, ACTION_DIM, STATE_DIM};

/// One-step forward model over state vectors, batched.
pub trait Dynamics: Sync {
    fn step_batch(&self, states: &mut [StateVec], actions: &[[f64; 2]]);
}

/// The simulator itself.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruth;

impl Dynamics for GroundTruth {
    fn step_batch(&self, states: &mut [StateVec], actions: &[[f64; 2]]) {
        for (s, a) in states.iter_mut().zip(actions) {
            *s = sim::step(&SceneState::from_vector(s), Action { delta: *a }).to_vector();
        }
    }
}

/// Iterates `dynamics` from `s0`; returns `actions.len() + 1` states.
pub fn rollout(dynamics: &dyn Dynamics, s0: &StateVec, actions: &[[f64; 2]]) -> Vec<StateVec> {
    let mut out = Vec::with_capacity(actions.len() + 1);
    let mut s = [*s0];
    out.push(*s0);
    for a in actions {
        dynamics.step_batch(&mut s, std::slice::from_ref(a));
        out.push(s[0]);
    }
    out
}

pub const INPUT_DIM: usize = STATE_DIM + ACTION_DIM + CONTACT_FEATURES;
const CONTACT_FEATURES: usize = 14;

/// Network input for one transition: the state and action followed by the
/// end-effector's offset and distance to each handle and mug, and the
/// faucet angle's sine and cosine.
pub fn input_features(s: &StateVec, a: &[f64; 2]) -> [f64; INPUT_DIM] {
    let scene = SceneState::from_vector(s);
    let mut x = [0.0; INPUT_DIM];
    x[..STATE_DIM].copy_from_slice(s);
    x[STATE_DIM..STATE_DIM + ACTION_DIM].copy_from_slice(a);
    let mut k = STATE_DIM + ACTION_DIM;
    for target in [scene.drawer_handle(), scene.faucet_handle(), scene.black_mug, scene.white_mug] {
        let d = [scene.ee[0] - target[0], scene.ee[1] - target[1]];
        x[k] = d[0];
        x[k + 1] = d[1];
        x[k + 2] = d[0].hypot(d[1]);
        k += 3;
    }
    x[k] = scene.faucet_angle.sin();
    x[k + 1] = scene.faucet_angle.cos();
    x
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsTrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub eval_every: usize,
    /// Final learning rate as a fraction of the initial one (cosine decay).
    pub lr_floor: f64,
}

impl Default for DynamicsTrainConfig {
    fn default() -> Self {
        DynamicsTrainConfig {
            hidden: vec![128, 128],
            learning_rate: 1e-3,
            batch_size: 128,
            steps: 20_000,
            eval_every: 1000,
            lr_floor: 0.02,
        }
    }
}

impl DynamicsTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("dynamics: batch_size and eval_every must be positive".into()));
        }
        Ok(())
    }

    pub fn net_spec(&self) -> MlpSpec {
        MlpSpec::relu_net(INPUT_DIM, &self.hidden, STATE_DIM, Activation::Linear, 0.0)
    }
}

/// Learned residual model: `s' = clip(s + scale * net(norm([s, a])))`.
#[derive(Clone, Debug)]
pub struct DynamicsModel {
    pub net: Mlp,
    pub input_norm: Standardizer,
    /// Per-dimension scale of the predicted residual.
    pub delta_scale: Vec<f64>,
}

impl DynamicsModel {
    /// Fresh model with a zeroed output layer, so it predicts `s' = s`.
    pub fn untrained(cfg: &DynamicsTrainConfig, seed: u64) -> Result<Self> {
        let mut net = Mlp::new(cfg.net_spec(), seed)?;
        net.zero_output_layer();
        Ok(DynamicsModel {
            net,
            input_norm: Standardizer::identity(INPUT_DIM),
            delta_scale: vec![1.0; STATE_DIM],
        })
    }

    fn features(&self, states: &[StateVec], actions: &[[f64; 2]]) -> Matrix {
        let mut x = Matrix::zeros(states.len(), INPUT_DIM);
        for (r, (s, a)) in states.iter().zip(actions).enumerate() {
            self.input_norm.apply(&input_features(s, a), x.row_mut(r));
        }
        x
    }

    /// Unclipped next-state prediction.
    pub fn predict_raw(&self, states: &[StateVec], actions: &[[f64; 2]]) -> Vec<StateVec> {
        let out = self.net.predict(&self.features(states, actions)).expect("dynamics input width");
        states
            .iter()
            .enumerate()
            .map(|(r, s)| {
                let mut next = *s;
                for k in 0..STATE_DIM {
                    next[k] += self.delta_scale[k] * out.row(r)[k];
                }
                next
            })
            .collect()
    }
}

impl Dynamics for DynamicsModel {
    fn step_batch(&self, states: &mut [StateVec], actions: &[[f64; 2]]) {
        let next = self.predict_raw(states, actions);
        for (s, mut n) in states.iter_mut().zip(next) {
            sim::clip_state_vector(&mut n);
            *s = n;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsCurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub heldout_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsManifest {
    pub seed: u64,
    pub config: DynamicsTrainConfig,
    pub dataset_hash: String,
    pub input_norm: Standardizer,
    pub delta_scale: Vec<f64>,
    pub best_step: usize,
    pub best_heldout_rmse: f64,
    pub curve: Vec<DynamicsCurvePoint>,
}

#[derive(Clone, Debug)]
pub struct DynamicsTraining {
    pub model: DynamicsModel,
    pub manifest: DynamicsManifest,
}

impl DynamicsTraining {
    pub fn save(&self, dir: &Path, name: &str) -> Result<String> {
        artifact::save_model(dir, name, &self.model.net, &self.manifest)
    }
}

pub fn load_dynamics(dir: &Path, name: &str) -> Result<(DynamicsModel, DynamicsManifest, String)> {
    let (net, manifest, hash): (Mlp, DynamicsManifest, String) = artifact::load_model(dir, name)?;
    if net.input_dim() != INPUT_DIM || net.output_dim() != STATE_DIM {
        return Err(Error::Shape { expected: INPUT_DIM, got: net.input_dim() });
    }
    let model = DynamicsModel {
        net,
        input_norm: manifest.input_norm.clone(),
        delta_scale: manifest.delta_scale.clone(),
    };
    Ok((model, manifest, hash))
}

/// One `(s, a, s')` triple per stored step.
pub fn transitions(d: &Dataset) -> Vec<(StateVec, [f64; 2], StateVec)> {
    d.episodes
        .iter()
        .flat_map(|e| (0..e.horizon()).map(move |t| (e.states[t], e.actions[t], e.states[t + 1])))
        .collect()
}

/// Root mean squared L2 error of one-step predictions, and the mean L2 norm
/// of the true per-step change.
pub fn one_step_error(model: &dyn Dynamics, data: &[(StateVec, [f64; 2], StateVec)]) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, 0.0);
    }
    let mut states: Vec<StateVec> = data.iter().map(|t| t.0).collect();
    let actions: Vec<[f64; 2]> = data.iter().map(|t| t.1).collect();
    model.step_batch(&mut states, &actions);
    let (mut se, mut change) = (0.0, 0.0);
    for (pred, (s, _, next)) in states.iter().zip(data) {
        se += sim::sub_sq(pred, next);
        change += sim::sub_sq(s, next).sqrt();
    }
    let n = data.len() as f64;
    ((se / n).sqrt(), change / n)
}

/// Minimizes mean squared one-step error over every transition of a 90/10
/// episode split; keeps the checkpoint with the lowest held-out RMSE.
pub fn train_dynamics(d: &Dataset, cfg: &DynamicsTrainConfig, seed: u64) -> Result<DynamicsTraining> {
    cfg.validate()?;
    let (train_set, held_set) = d.split_holdout();
    let train = transitions(&train_set);
    let held = transitions(&held_set);
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inputs: Vec<[f64; INPUT_DIM]> = train.iter().map(|(s, a, _)| input_features(s, a)).collect();
    let input_norm = Standardizer::fit(INPUT_DIM, inputs.iter().map(|x| &x[..]));
    let deltas: Vec<StateVec> = train.iter().map(|(s, _, n)| std::array::from_fn(|k| n[k] - s[k])).collect();
    let delta_scale = Standardizer::fit(STATE_DIM, deltas.iter().map(|x| &x[..])).std;
    let mut net = Mlp::new(cfg.net_spec(), derive_seed(seed, &[0]))?;
    net.zero_output_layer();
    let mut model = DynamicsModel { net, input_norm, delta_scale };

    let mut rng = rng_for(seed, &[1]);
    let mut adam = AdamState::new(&model.net.spec, cfg.learning_rate);
    let mut best = (model.net.clone(), 0usize, f64::INFINITY);
    let mut curve = Vec::new();
    let (mut loss_acc, mut loss_n) = (0.0, 0usize);
    let mut target = Matrix::zeros(cfg.batch_size, STATE_DIM);
    let mut bs = Vec::with_capacity(cfg.batch_size);
    let mut ba = Vec::with_capacity(cfg.batch_size);
    for step in 1..=cfg.steps {
        adam.learning_rate = cosine_lr(cfg.learning_rate, cfg.lr_floor, step - 1, cfg.steps);
        bs.clear();
        ba.clear();
        for r in 0..cfg.batch_size {
            let idx = rng.random_range(0..train.len());
            let (s, a, _) = train[idx];
            bs.push(s);
            ba.push(a);
            for k in 0..STATE_DIM {
                target.row_mut(r)[k] = deltas[idx][k] / model.delta_scale[k];
            }
        }
        let x = model.features(&bs, &ba);
        let (out, cache) = model.net.forward(&x, true, &mut rng)?;
        let n = out.data.len() as f64;
        let mut grad = Matrix::zeros(out.rows, out.cols);
        let mut loss = 0.0;
        for ((g, o), t) in grad.data.iter_mut().zip(&out.data).zip(&target.data) {
            let d = o - t;
            loss += d * d / n;
            *g = 2.0 * d / n;
        }
        let grads = model.net.backward(&cache, &grad);
        adam.step(&mut model.net.params, &grads);
        loss_acc += loss;
        loss_n += 1;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let (rmse, _) = one_step_error(&model, if held.is_empty() { &train } else { &held });
            curve.push(DynamicsCurvePoint { step, train_loss: loss_acc / loss_n as f64, heldout_rmse: rmse });
            loss_acc = 0.0;
            loss_n = 0;
            if rmse <= best.2 {
                best = (model.net.clone(), step, rmse);
            }
        }
    }
    let (best_net, best_step, best_rmse) = best;
    model.net = best_net;
    let manifest = DynamicsManifest {
        seed,
        config: cfg.clone(),
        dataset_hash: d.content_hash()?,
        input_norm: model.input_norm.clone(),
        delta_scale: model.delta_scale.clone(),
        best_step,
        best_heldout_rmse: if cfg.steps > 0 { best_rmse } else { one_step_error(&model, &held).0 },
        curve,
    };
    Ok(DynamicsTraining { model, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::collect;

    #[test]
    fn ground_truth_rollout_matches_simulator() {
        let d = collect(3, 10, 4);
        for e in &d.episodes {
            assert_eq!(rollout(&GroundTruth, e.first(), &e.actions), e.states);
        }
        assert_eq!(rollout(&GroundTruth, d.episodes[0].first(), &[]), vec![*d.episodes[0].first()]);
    }

    #[test]
    fn untrained_model_is_identity() {
        let m = DynamicsModel::untrained(&DynamicsTrainConfig::default(), 3).unwrap();
        let e = &collect(1, 5, 2).episodes[0];
        let states = rollout(&m, e.first(), &e.actions);
        assert_eq!(states.len(), 6);
        assert!(states.iter().all(|s| s == e.first()));
        let zero = train_dynamics(&collect(20, 5, 2), &DynamicsTrainConfig { steps: 0, ..Default::default() }, 1)
            .unwrap();
        let (s, a) = (*e.first(), e.actions[0]);
        assert_eq!(zero.model.predict_raw(&[s], &[a])[0], s);
    }

    #[test]
    fn predictions_are_clipped_to_legal_ranges() {
        let mut m = DynamicsModel::untrained(&DynamicsTrainConfig::default(), 3).unwrap();
        m.net.params.layers.last_mut().unwrap().bias.fill(10.0);
        let s = *collect(1, 1, 0).episodes[0].first();
        let mut batch = [s];
        m.step_batch(&mut batch, &[[0.0, 0.0]]);
        let mut clipped = batch[0];
        sim::clip_state_vector(&mut clipped);
        assert_eq!(batch[0], clipped);
        assert!(batch[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn same_seed_gives_identical_checkpoint() {
        let d = collect(30, 5, 9);
        let cfg = DynamicsTrainConfig { steps: 50, eval_every: 25, ..Default::default() };
        let a = train_dynamics(&d, &cfg, 5).unwrap();
        let b = train_dynamics(&d, &cfg, 5).unwrap();
        assert_eq!(a.model.net.to_bytes(), b.model.net.to_bytes());
        assert_eq!(a.manifest, b.manifest);
    }
}
