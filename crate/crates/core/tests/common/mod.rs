//! Helpers shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lorel_core::baselines::{BcTrainConfig, QTrainConfig};
use lorel_core::dynamics::{rollout, Dynamics, DynamicsTrainConfig};
use lorel_core::harness::{AblationConfig, DatasetConfig, Pipeline, RunConfig};
use lorel_core::nn::{gradient_check, squared_error_loss, GradCheck, Matrix, Mlp};
use lorel_core::planner::{PlanConfig, Planner};
use lorel_core::reward::{bce_loss, RewardTrainConfig};
use lorel_core::sim::{reset, StateVec, TaskId, ACTION_LIMIT, TABLE_DEPTH, TABLE_WIDTH};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Finite-difference check of every network shape used in the system at its
/// default width, with the loss each one is trained on.
pub fn gradient_suite(stride: usize) -> Vec<(&'static str, GradCheck)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let specs = [
        ("reward", RewardTrainConfig::default().net_spec()),
        ("dynamics", DynamicsTrainConfig::default().net_spec()),
        ("lcbc", BcTrainConfig::default().net_spec()),
        ("lcrl", QTrainConfig::default().net_spec()),
    ];
    specs
        .into_iter()
        .enumerate()
        .map(|(i, (name, spec))| {
            let net = Mlp::new(spec, 20 + i as u64).unwrap();
            let x = random_matrix(4, net.input_dim(), &mut rng);
            let check = if name == "reward" {
                let labels = [1.0, 0.0, 1.0, 0.0];
                gradient_check(&net, &x, |o| bce_loss(o, &labels), 1e-5, stride)
            } else {
                let t = random_matrix(4, net.output_dim(), &mut rng);
                gradient_check(&net, &x, squared_error_loss(&t), 1e-5, stride)
            };
            (name, check.unwrap())
        })
        .collect()
}

/// End-effector integrator with no objects: `ee += clip(a)`, kept on the table.
pub struct FreeSpace;

impl Dynamics for FreeSpace {
    fn step_batch(&self, states: &mut [StateVec], actions: &[[f64; 2]]) {
        for (s, a) in states.iter_mut().zip(actions) {
            s[0] = (s[0] + a[0].clamp(-ACTION_LIMIT, ACTION_LIMIT)).clamp(0.0, TABLE_WIDTH);
            s[1] = (s[1] + a[1].clamp(-ACTION_LIMIT, ACTION_LIMIT)).clamp(0.0, TABLE_DEPTH);
        }
    }
}

/// Final end-effector distance to a goal after CEM maximizes `-|ee - g|^2`.
/// Start and goal are drawn from `seed`; the goal is always reachable within
/// the horizon, so the analytic optimum is the goal itself.
pub fn cem_quadratic_error(seed: u64, cfg: &PlanConfig) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = reset(seed).to_vector();
    s[0] = rng.random_range(0.2..0.8);
    s[1] = rng.random_range(0.1..0.5);
    let g = [rng.random_range(0.2..0.8), rng.random_range(0.1..0.5)];
    let reward = move |_: &StateVec, f: &StateVec, _: &str| -((f[0] - g[0]).powi(2) + (f[1] - g[1]).powi(2));
    let plan = Planner::new(&FreeSpace, &reward, cfg).plan(&s, &s, cfg.horizon, "reach", &mut rng);
    let f = *rollout(&FreeSpace, &s, &plan.actions).last().unwrap();
    ((f[0] - g[0]).powi(2) + (f[1] - g[1]).powi(2)).sqrt()
}

/// Small end-to-end config: short training, two tasks, few trials.
pub fn reduced_config(dir: &Path) -> RunConfig {
    RunConfig {
        output_dir: dir.to_path_buf(),
        dataset: DatasetConfig { episodes: 120, horizon: 20, seed: 5 },
        reward: RewardTrainConfig { steps: 200, eval_every: 100, eval_examples: 64, ..Default::default() },
        dynamics: DynamicsTrainConfig { steps: 200, eval_every: 100, batch_size: 32, ..Default::default() },
        lcbc: BcTrainConfig { steps: 100, eval_every: 50, ..Default::default() },
        lcrl: QTrainConfig { max_steps: 100, action_samples: 8, ..Default::default() },
        plan: PlanConfig { samples: 32, ..PlanConfig::sim() },
        tasks: vec![TaskId::OpenDrawer, TaskId::FaucetRight],
        trials: 3,
        seeds: vec![0, 1],
        ablation: AblationConfig { small_data_episodes: 60, ..Default::default() },
        ..Default::default()
    }
}

/// Every regular file under `dir` keyed by its relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Runs the reduced pipeline in `dir`; returns all artifacts written plus the
/// report JSON with wall clock zeroed.
pub fn reduced_run(dir: &Path) -> (BTreeMap<String, Vec<u8>>, Vec<u8>) {
    let report = Pipeline::new(reduced_config(dir)).unwrap().run_eval().unwrap();
    let json = report.without_timing().to_json().unwrap();
    (snapshot(dir), json)
}

/// Names of artifacts that differ between two snapshots (including ones present in only one).
pub fn differing(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}
