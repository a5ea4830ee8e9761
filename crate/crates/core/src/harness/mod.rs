//! Experiment runner: run configuration, cached artifacts, the evaluation
//! protocols and their reports.
//!
//! Every artifact lives under `output_dir`: the raw corpus in
//! `dataset.jsonl` and every trained network in `models/`. Missing models are
//! trained on demand when `train_missing` is set, otherwise the run fails
//! naming the absent file.

mod bands;
mod render;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, sha256_hex};
use crate::baselines::{
    self, goal_state, goal_state_cost, oracle_reward, rollout_policy, BcPolicy, BcTrainConfig, Policy,
    QModel, QTrainConfig, RandomPolicy,
};
use crate::data::{self, Dataset};
use crate::dynamics::{self, Dynamics, DynamicsModel, DynamicsTrainConfig, GroundTruth};
use crate::error::{Error, Result};
use crate::lang::{EncoderMode, InstructionSet, Rephrasings};
use crate::planner::{PlanConfig, Planner, Trajectory};
use crate::reward::{self, RewardModel, RewardTrainConfig};
use crate::seeding::{derive_seed, rng_for};
use crate::sim::{self, TaskId};

pub use bands::{check_ablation, check_diagnostics, check_eval, check_generalization, Band};
pub use render::{render_episode, render_svg};
pub use report::{emit_report, load_report, summary_csv, EvalReport, ReportKind, ReportRow, SeedStat, TaskCell};

pub const SCHEMA_VERSION: u32 = 1;

const RESET_STREAM: u64 = 0x5245;
const PLAN_STREAM: u64 = 0x504c;
const PHRASE_STREAM: u64 = 0x5048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Oracle,
    Lorel,
    Lcbc,
    Lcrl,
    GoalState,
    Random,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Oracle, Method::Lorel, Method::Lcbc, Method::Lcrl, Method::GoalState, Method::Random];

    pub fn name(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Lorel => "lorel",
            Method::Lcbc => "lcbc",
            Method::Lcrl => "lcrl",
            Method::GoalState => "goal-state",
            Method::Random => "random",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { episodes: 5000, horizon: 20, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Size of the low-data corpus (a prefix of the main one).
    pub small_data_episodes: usize,
    /// Positive window used by the noisy-positive variant.
    pub noisy_alpha: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { small_data_episodes: 500, noisy_alpha: 0.25 }
    }
}

/// Everything that determines a run. Serialized as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub output_dir: PathBuf,
    pub train_missing: bool,
    pub dataset: DatasetConfig,
    pub reward: RewardTrainConfig,
    pub dynamics: DynamicsTrainConfig,
    pub dynamics_seed: u64,
    pub lcbc: BcTrainConfig,
    pub lcrl: QTrainConfig,
    pub plan: PlanConfig,
    pub tasks: Vec<TaskId>,
    pub trials: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub instruction_sets: Vec<InstructionSet>,
    /// Rephrasing table for the generalization study; bundled when absent.
    pub rephrasings: Option<PathBuf>,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            output_dir: PathBuf::from("runs/default"),
            train_missing: true,
            dataset: DatasetConfig::default(),
            reward: RewardTrainConfig::default(),
            dynamics: DynamicsTrainConfig::default(),
            dynamics_seed: 0,
            lcbc: BcTrainConfig::default(),
            lcrl: QTrainConfig::default(),
            plan: PlanConfig::sim(),
            tasks: TaskId::ALL.to_vec(),
            trials: 50,
            seeds: vec![0, 1, 2],
            methods: Method::ALL.to_vec(),
            instruction_sets: InstructionSet::ALL.to_vec(),
            rephrasings: None,
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML config. The `schema_version` key is mandatory.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        match table.get("schema_version").and_then(|v| v.as_integer()) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => return Err(Error::Version { found: v as u32, expected: SCHEMA_VERSION }),
            None => return Err(Error::Config("missing schema_version".into())),
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("{e}")))
    }

    /// Default desk-scale protocol writing under `output_dir`.
    pub fn desk(output_dir: impl Into<PathBuf>) -> Self {
        RunConfig { output_dir: output_dir.into(), ..Default::default() }
    }

    /// Full-length protocol: 100 trials per task and seed.
    pub fn full_protocol(mut self) -> Self {
        self.trials = 100;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Version { found: self.schema_version, expected: SCHEMA_VERSION });
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty");
        }
        if self.tasks.is_empty() || self.trials == 0 {
            return bad("need at least one task and one trial");
        }
        if self.dataset.episodes == 0 || self.dataset.horizon == 0 {
            return bad("dataset needs episodes and a positive horizon");
        }
        if self.ablation.small_data_episodes == 0 || self.ablation.small_data_episodes > self.dataset.episodes {
            return bad("small_data_episodes must be in 1..=dataset.episodes");
        }
        if let Some(p) = &self.rephrasings {
            if !p.exists() {
                return Err(Error::MissingArtifact(p.clone()));
            }
        }
        self.reward.validate()?;
        self.dynamics.validate()?;
        self.plan.validate()?;
        RewardTrainConfig { alpha: self.ablation.noisy_alpha, noisy_positives: true, ..self.reward.clone() }
            .validate()
    }

    /// SHA-256 of the canonical JSON form, ignoring where outputs go and
    /// whether missing models may be trained.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.train_missing = true;
        Ok(sha256_hex(&serde_json::to_vec(&c)?))
    }
}

/// Reward classifier variants trained by the studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RewardVariant {
    Full,
    HashOnly,
    NoCrossNegatives,
    NoFlippedNegatives,
    NoFiltering,
    SmallData { noisy_positives: bool },
}

impl RewardVariant {
    pub fn name(self) -> &'static str {
        match self {
            RewardVariant::Full => "full",
            RewardVariant::HashOnly => "hash-only",
            RewardVariant::NoCrossNegatives => "no-cross-negatives",
            RewardVariant::NoFlippedNegatives => "no-flipped-negatives",
            RewardVariant::NoFiltering => "no-filtering",
            RewardVariant::SmallData { noisy_positives: false } => "small-data-alpha-0",
            RewardVariant::SmallData { noisy_positives: true } => "small-data-noisy",
        }
    }

    fn config(self, cfg: &RunConfig) -> RewardTrainConfig {
        let base = cfg.reward.clone();
        match self {
            RewardVariant::Full | RewardVariant::NoFiltering => base,
            RewardVariant::HashOnly => RewardTrainConfig { encoder_mode: EncoderMode::HashOnly, ..base },
            RewardVariant::NoCrossNegatives => RewardTrainConfig { use_cross_negatives: false, ..base },
            RewardVariant::NoFlippedNegatives => RewardTrainConfig { use_flipped_negatives: false, ..base },
            RewardVariant::SmallData { noisy_positives } => RewardTrainConfig {
                noisy_positives,
                alpha: if noisy_positives { cfg.ablation.noisy_alpha } else { 0.0 },
                ..base
            },
        }
    }
}

/// Diagnostics of the learned models on a freshly collected corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub heldout_seed: u64,
    pub heldout_episodes: usize,
    pub one_step_rmse: f64,
    pub mean_step_change: f64,
    pub rollout_error_median: f64,
    pub rollout_error_p90: f64,
    /// Filtered episodes scored for the temporal-progress check.
    pub temporal_episodes: usize,
    pub reward_forward: f64,
    pub reward_backward: f64,
}

impl Diagnostics {
    pub fn temporal_margin(&self) -> f64 {
        self.reward_forward - self.reward_backward
    }

    pub fn one_step_ratio(&self) -> f64 {
        self.one_step_rmse / self.mean_step_change
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub method: Method,
    pub task: TaskId,
    pub seed: u64,
    pub trial: u64,
    pub success: bool,
    pub trajectory: Trajectory,
}

/// How a row of an evaluation acts in a trial.
enum Agent {
    Plan { reward: RewardModel },
    Oracle,
    GoalState,
    Policy(Box<dyn Policy>),
}

/// Which instruction a row hands to its agent.
#[derive(Clone, Copy)]
enum Phrase {
    Canonical,
    Set(InstructionSet),
}

struct Row {
    name: String,
    phrase: Phrase,
    /// One agent per seed.
    agents: Vec<Agent>,
}

/// Cached access to the artifacts of one run configuration.
pub struct Pipeline {
    cfg: RunConfig,
    verbose: bool,
    raw: Option<Dataset>,
    dataset_hash: Option<String>,
    dynamics: Option<DynamicsModel>,
    checkpoints: BTreeMap<String, String>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Pipeline {
            cfg,
            verbose: false,
            raw: None,
            dataset_hash: None,
            dynamics: None,
            checkpoints: BTreeMap::new(),
        })
    }

    /// Logs progress to stderr.
    pub fn verbose(mut self, on: bool) -> Self {
        self.verbose = on;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[lorel] {}", msg.as_ref());
        }
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.cfg.output_dir.join("dataset.jsonl")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.cfg.output_dir.join("models")
    }

    fn dataset_matches(&self, d: &Dataset) -> bool {
        let c = &self.cfg.dataset;
        d.len() == c.episodes
            && d.horizon == c.horizon
            && d.episodes.first().is_some_and(|e| e.seed == derive_seed(c.seed, &[0]))
    }

    /// The raw corpus, loaded from disk or collected and saved.
    pub fn dataset(&mut self) -> Result<&Dataset> {
        if self.raw.is_none() {
            let path = self.dataset_path();
            let d = if path.exists() {
                let d = Dataset::load(&path)?;
                if !self.dataset_matches(&d) {
                    return Err(Error::Config(format!(
                        "{} does not match the dataset config; remove it to recollect",
                        path.display()
                    )));
                }
                d
            } else if self.cfg.train_missing {
                let c = &self.cfg.dataset;
                self.log(format!("collecting {} episodes", c.episodes));
                let d = data::collect(c.episodes, c.horizon, c.seed);
                fs::create_dir_all(&self.cfg.output_dir)?;
                d.save(&path)?;
                d
            } else {
                return Err(Error::MissingArtifact(path));
            };
            self.dataset_hash = Some(sha256_hex(&fs::read(&path)?));
            self.raw = Some(d);
        }
        Ok(self.raw.as_ref().expect("dataset just loaded"))
    }

    pub fn dataset_hash(&mut self) -> Result<String> {
        self.dataset()?;
        Ok(self.dataset_hash.clone().expect("hash recorded with dataset"))
    }

    pub fn filtered(&mut self) -> Result<Dataset> {
        Ok(data::filter_dataset(self.dataset()?))
    }

    fn small_filtered(&mut self) -> Result<Dataset> {
        let n = self.cfg.ablation.small_data_episodes;
        let raw = self.dataset()?;
        Ok(data::filter_dataset(&Dataset::new(raw.episodes[..n].to_vec(), raw.horizon)))
    }

    /// Loads `name` when present and still consistent with the config,
    /// otherwise trains it (if allowed) through `fit`.
    fn ensure<T, M>(
        &mut self,
        name: &str,
        load: fn(&Path, &str) -> Result<(T, M, String)>,
        current: impl Fn(&M) -> bool,
        fit: impl FnOnce(&mut Self, &Path, &str) -> Result<()>,
    ) -> Result<T> {
        let dir = self.models_dir();
        let ckpt = artifact::checkpoint_path(&dir, name);
        let mut stale = false;
        if ckpt.exists() {
            let (model, manifest, hash) = load(&dir, name)?;
            if current(&manifest) {
                self.checkpoints.insert(name.to_string(), hash);
                return Ok(model);
            }
            stale = true;
        }
        if !self.cfg.train_missing {
            return Err(if stale {
                Error::Config(format!("{} was trained with a different config", ckpt.display()))
            } else {
                Error::MissingArtifact(ckpt)
            });
        }
        self.log(format!("training {name}"));
        let t = Instant::now();
        fit(self, &dir, name)?;
        self.log(format!("trained {name} in {:.1}s", t.elapsed().as_secs_f64()));
        let (model, _, hash) = load(&dir, name)?;
        self.checkpoints.insert(name.to_string(), hash);
        Ok(model)
    }

    pub fn dynamics(&mut self) -> Result<DynamicsModel> {
        if let Some(m) = &self.dynamics {
            return Ok(m.clone());
        }
        let hash = self.dataset_hash()?;
        let (cfg, seed) = (self.cfg.dynamics.clone(), self.cfg.dynamics_seed);
        let m = self.ensure(
            "dynamics",
            dynamics::load_dynamics,
            |man| man.config == cfg && man.seed == seed && man.dataset_hash == hash,
            |p, dir, name| {
                dynamics::train_dynamics(p.dataset()?, &cfg, seed)?.save(dir, name)?;
                Ok(())
            },
        )?;
        self.dynamics = Some(m.clone());
        Ok(m)
    }

    pub fn reward(&mut self, variant: RewardVariant, seed: u64) -> Result<RewardModel> {
        let cfg = variant.config(&self.cfg);
        let d = match variant {
            RewardVariant::NoFiltering => self.dataset()?.clone(),
            RewardVariant::SmallData { .. } => self.small_filtered()?,
            _ => self.filtered()?,
        };
        let hash = d.content_hash()?;
        let name = format!("reward-{}-s{seed}", variant.name());
        self.ensure(
            &name,
            reward::load_reward,
            |man| man.config == cfg && man.seed == seed && man.dataset_hash == hash,
            |_, dir, name| {
                reward::train(&d, &cfg, seed)?.save(dir, name)?;
                Ok(())
            },
        )
    }

    pub fn lcbc(&mut self, seed: u64) -> Result<BcPolicy> {
        let d = self.filtered()?;
        let hash = d.content_hash()?;
        let cfg = self.cfg.lcbc.clone();
        self.ensure(
            &format!("lcbc-s{seed}"),
            baselines::load_lcbc,
            |man| man.config == cfg && man.seed == seed && man.dataset_hash == hash,
            |_, dir, name| {
                baselines::train_lcbc(&d, &cfg, seed)?.save(dir, name)?;
                Ok(())
            },
        )
    }

    pub fn lcrl(&mut self, seed: u64) -> Result<QModel> {
        let d = self.filtered()?;
        let hash = d.content_hash()?;
        let cfg = self.cfg.lcrl.clone();
        self.ensure(
            &format!("lcrl-s{seed}"),
            baselines::load_lcrl,
            |man| man.config == cfg && man.seed == seed && man.dataset_hash == hash,
            |_, dir, name| {
                baselines::train_lcrl(&d, &cfg, seed)?.save(dir, name)?;
                Ok(())
            },
        )
    }

    /// Trains (or loads) every model the configured studies need.
    pub fn train_all(&mut self) -> Result<()> {
        self.dynamics()?;
        for seed in self.cfg.seeds.clone() {
            self.reward(RewardVariant::Full, seed)?;
            self.lcbc(seed)?;
            self.lcrl(seed)?;
        }
        Ok(())
    }

    fn agent(&mut self, method: Method, seed: u64) -> Result<Agent> {
        Ok(match method {
            Method::Oracle => Agent::Oracle,
            Method::Lorel => Agent::Plan { reward: self.reward(RewardVariant::Full, seed)? },
            Method::Lcbc => Agent::Policy(Box::new(self.lcbc(seed)?)),
            Method::Lcrl => Agent::Policy(Box::new(self.lcrl(seed)?)),
            Method::GoalState => Agent::GoalState,
            Method::Random => Agent::Policy(Box::new(RandomPolicy)),
        })
    }

    fn needs_dynamics(rows: &[Row]) -> bool {
        rows.iter().flat_map(|r| &r.agents).any(|a| matches!(a, Agent::Plan { .. } | Agent::GoalState))
    }

    fn rephrasings(&self) -> Result<Rephrasings> {
        match &self.cfg.rephrasings {
            Some(p) => Rephrasings::load(p),
            None => Ok(Rephrasings::bundled()),
        }
    }

    /// Runs every (row, seed, task, trial) episode and aggregates the counts.
    fn evaluate(&mut self, kind: ReportKind, rows: Vec<Row>, started: Instant) -> Result<EvalReport> {
        let dataset_hash = self.dataset_hash()?;
        let learned = if Self::needs_dynamics(&rows) { Some(self.dynamics()?) } else { None };
        let phrases = self.rephrasings()?;
        let cfg = &self.cfg;
        let mut jobs = Vec::new();
        for r in 0..rows.len() {
            for s in 0..cfg.seeds.len() {
                for (t, &task) in cfg.tasks.iter().enumerate() {
                    for trial in 0..cfg.trials {
                        jobs.push((r, s, t, task, trial as u64));
                    }
                }
            }
        }
        self.log(format!("{kind}: {} episodes", jobs.len()));
        let outcomes: Vec<bool> = jobs
            .par_iter()
            .map(|&(r, s, _, task, trial)| {
                let row = &rows[r];
                let seed = cfg.seeds[s];
                let instruction = match row.phrase {
                    Phrase::Canonical => task.instruction().to_string(),
                    Phrase::Set(set) => {
                        let options = phrases.get(task, set);
                        let mut rng = rng_for(seed, &[PHRASE_STREAM, task as u64, trial]);
                        options[rng.random_range(0..options.len())].clone()
                    }
                };
                let traj = run_trial(cfg, &row.agents[s], learned.as_ref(), task, &instruction, seed, trial);
                sim::success_any(&task.spec(), &traj.states)
            })
            .collect();

        let mut counts = vec![vec![vec![0usize; cfg.tasks.len()]; cfg.seeds.len()]; rows.len()];
        for (&(r, s, t, _, _), ok) in jobs.iter().zip(outcomes) {
            counts[r][s][t] += ok as usize;
        }
        let report_rows =
            rows.iter().zip(counts).map(|(row, c)| ReportRow::from_counts(&row.name, &cfg.tasks, &c, cfg.trials)).collect();
        Ok(EvalReport {
            schema_version: SCHEMA_VERSION,
            kind,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash()?,
            dataset_hash,
            checkpoints: self.checkpoints.clone(),
            tasks: cfg.tasks.clone(),
            seeds: cfg.seeds.clone(),
            trials: cfg.trials,
            rows: report_rows,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        })
    }

    /// Method comparison with each method's canonical task instructions.
    pub fn run_eval(&mut self) -> Result<EvalReport> {
        let started = Instant::now();
        self.checkpoints.clear();
        let mut rows = Vec::new();
        for method in self.cfg.methods.clone() {
            let agents = self.cfg.seeds.clone().into_iter().map(|s| self.agent(method, s)).collect::<Result<_>>()?;
            rows.push(Row { name: method.name().to_string(), phrase: Phrase::Canonical, agents });
        }
        self.evaluate(ReportKind::Eval, rows, started)
    }

    /// LOReL with rephrased instructions under both encoder modes.
    pub fn run_generalization(&mut self) -> Result<EvalReport> {
        let started = Instant::now();
        self.checkpoints.clear();
        let mut rows = Vec::new();
        for (mode, variant) in [(EncoderMode::Lexicon, RewardVariant::Full), (EncoderMode::HashOnly, RewardVariant::HashOnly)] {
            let models: Vec<RewardModel> =
                self.cfg.seeds.clone().into_iter().map(|s| self.reward(variant, s)).collect::<Result<_>>()?;
            for set in self.cfg.instruction_sets.clone() {
                let agents = models.iter().map(|m| Agent::Plan { reward: m.clone() }).collect();
                rows.push(Row { name: format!("{mode}/{set}"), phrase: Phrase::Set(set), agents });
            }
        }
        self.evaluate(ReportKind::Generalization, rows, started)
    }

    /// LOReL reward ablations, plus the noisy-positive comparison on a small corpus.
    pub fn run_ablations(&mut self) -> Result<EvalReport> {
        let started = Instant::now();
        self.checkpoints.clear();
        let variants = [
            RewardVariant::Full,
            RewardVariant::NoCrossNegatives,
            RewardVariant::NoFlippedNegatives,
            RewardVariant::NoFiltering,
            RewardVariant::SmallData { noisy_positives: false },
            RewardVariant::SmallData { noisy_positives: true },
        ];
        let mut rows = Vec::new();
        for v in variants {
            let agents = self
                .cfg
                .seeds
                .clone()
                .into_iter()
                .map(|s| Ok(Agent::Plan { reward: self.reward(v, s)? }))
                .collect::<Result<_>>()?;
            rows.push(Row { name: v.name().to_string(), phrase: Phrase::Canonical, agents });
        }
        self.evaluate(ReportKind::Ablation, rows, started)
    }

    /// Replays a single evaluation episode with the canonical instruction.
    pub fn episode(&mut self, method: Method, task: TaskId, seed: u64, trial: u64) -> Result<EpisodeRecord> {
        let agent = self.agent(method, seed)?;
        let learned = match agent {
            Agent::Plan { .. } | Agent::GoalState => Some(self.dynamics()?),
            _ => None,
        };
        let trajectory = run_trial(&self.cfg, &agent, learned.as_ref(), task, task.instruction(), seed, trial);
        let success = sim::success_any(&task.spec(), &trajectory.states);
        Ok(EpisodeRecord { method, task, seed, trial, success, trajectory })
    }

    /// Dynamics and reward checks on `episodes` fresh episodes from `seed`,
    /// using the first configured seed's LOReL reward.
    pub fn diagnostics(&mut self, episodes: usize, seed: u64) -> Result<Diagnostics> {
        let dyn_model = self.dynamics()?;
        let reward = self.reward(RewardVariant::Full, self.cfg.seeds[0])?;
        let held = data::collect(episodes, self.cfg.dataset.horizon, seed);
        let (one_step_rmse, mean_step_change) = dynamics::one_step_error(&dyn_model, &dynamics::transitions(&held));
        let mut errs: Vec<f64> = held
            .episodes
            .par_iter()
            .map(|e| {
                let states = dynamics::rollout(&dyn_model, e.first(), &e.actions);
                sim::sub_sq(states.last().expect("rollout keeps s0"), e.last()).sqrt()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        let quantile = |q: f64| errs[((errs.len() - 1) as f64 * q).round() as usize];
        let filtered = data::filter_dataset(&held);
        let n = filtered.len().max(1) as f64;
        let (mut fwd, mut back) = (0.0, 0.0);
        for e in &filtered.episodes {
            fwd += reward.reward(e.first(), e.last(), &e.instruction);
            back += reward.reward(e.last(), e.first(), &e.instruction);
        }
        Ok(Diagnostics {
            heldout_seed: seed,
            heldout_episodes: held.len(),
            one_step_rmse,
            mean_step_change,
            rollout_error_median: quantile(0.5),
            rollout_error_p90: quantile(0.9),
            temporal_episodes: filtered.len(),
            reward_forward: fwd / n,
            reward_backward: back / n,
        })
    }
}

/// Executes one evaluation episode from the trial's seeded initial state.
fn run_trial(
    cfg: &RunConfig,
    agent: &Agent,
    learned: Option<&DynamicsModel>,
    task: TaskId,
    instruction: &str,
    seed: u64,
    trial: u64,
) -> Trajectory {
    let spec = task.spec();
    let s0 = sim::reset(derive_seed(seed, &[RESET_STREAM, task as u64, trial]));
    let mut rng = rng_for(seed, &[PLAN_STREAM, task as u64, trial]);
    let learned = || -> &dyn Dynamics { learned.expect("dynamics loaded for planning rows") };
    match agent {
        Agent::Plan { reward } => {
            Planner::new(learned(), reward, &cfg.plan).run_episode(&spec, instruction, &s0, &mut rng).trajectory
        }
        Agent::Oracle => {
            let r = oracle_reward(spec);
            Planner::new(&GroundTruth, &r, &cfg.plan).run_episode(&spec, instruction, &s0, &mut rng).trajectory
        }
        Agent::GoalState => {
            let cost = goal_state_cost(&goal_state(spec, &s0));
            Planner::new(learned(), &cost, &cfg.plan).run_episode(&spec, instruction, &s0, &mut rng).trajectory
        }
        Agent::Policy(p) => rollout_policy(p.as_ref(), instruction, &s0, cfg.plan.episode_len, &mut rng),
    }
}

pub fn run_eval(cfg: &RunConfig) -> Result<EvalReport> {
    Pipeline::new(cfg.clone())?.run_eval()
}

pub fn run_generalization(cfg: &RunConfig) -> Result<EvalReport> {
    Pipeline::new(cfg.clone())?.run_generalization()
}

pub fn run_ablations(cfg: &RunConfig) -> Result<EvalReport> {
    Pipeline::new(cfg.clone())?.run_ablations()
}
