use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lorel_core::harness::{
    self, check_ablation, check_diagnostics, check_eval, check_generalization, emit_report, load_report, Band,
    EvalReport, Method, Pipeline, ReportKind, RewardVariant, RunConfig,
};
use lorel_core::sim::TaskId;

#[derive(Parser)]
#[command(name = "lorel", version, about = "Language-conditioned reward learning on a 2D tabletop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
struct RunArgs {
    /// TOML run config; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Number of episodes to collect.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    dataset_seed: Option<u64>,
    /// Trials per task and seed.
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated task names.
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<String>>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    reward_steps: Option<usize>,
    #[arg(long)]
    dynamics_steps: Option<usize>,
    #[arg(long)]
    rephrasings: Option<PathBuf>,
    /// Use 100 trials per task and seed.
    #[arg(long)]
    full_protocol: bool,
    /// Fail instead of training models that are missing.
    #[arg(long)]
    no_train: bool,
    #[arg(long, short)]
    quiet: bool,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.episodes {
            cfg.dataset.episodes = v;
            cfg.ablation.small_data_episodes = cfg.ablation.small_data_episodes.min(v);
        }
        if let Some(v) = self.dataset_seed {
            cfg.dataset.seed = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.tasks {
            cfg.tasks = v.iter().map(|t| t.parse()).collect::<Result<_, _>>()?;
        }
        if let Some(v) = &self.methods {
            cfg.methods = v.iter().map(|m| m.parse()).collect::<Result<_, _>>()?;
        }
        if let Some(v) = self.reward_steps {
            cfg.reward.steps = v;
        }
        if let Some(v) = self.dynamics_steps {
            cfg.dynamics.steps = v;
        }
        if let Some(v) = &self.rephrasings {
            cfg.rephrasings = Some(v.clone());
        }
        if self.full_protocol {
            cfg = cfg.full_protocol();
        }
        if self.no_train {
            cfg.train_missing = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn pipeline(&self) -> Result<Pipeline> {
        Ok(Pipeline::new(self.config()?)?.verbose(!self.quiet))
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Variant {
    Full,
    HashOnly,
    NoCrossNegatives,
    NoFlippedNegatives,
    NoFiltering,
    SmallDataAlpha0,
    SmallDataNoisy,
}

impl From<Variant> for RewardVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Full => RewardVariant::Full,
            Variant::HashOnly => RewardVariant::HashOnly,
            Variant::NoCrossNegatives => RewardVariant::NoCrossNegatives,
            Variant::NoFlippedNegatives => RewardVariant::NoFlippedNegatives,
            Variant::NoFiltering => RewardVariant::NoFiltering,
            Variant::SmallDataAlpha0 => RewardVariant::SmallData { noisy_positives: false },
            Variant::SmallDataNoisy => RewardVariant::SmallData { noisy_positives: true },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the default run config as TOML.
    Config,
    /// Collect and annotate the random-policy corpus.
    Collect(RunArgs),
    /// Train reward classifiers (every configured seed unless --seed is given).
    TrainReward {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "full")]
        variant: Variant,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the learned dynamics model.
    TrainDynamics(RunArgs),
    /// Train language-conditioned behavior cloning.
    TrainBc {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train language-conditioned offline Q-learning.
    TrainQ {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare all methods on the task suite.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Exit non-zero unless every band passes.
        #[arg(long)]
        check: bool,
        /// Held-out episodes for the dynamics and reward diagnostics (0 skips them).
        #[arg(long, default_value_t = 1000)]
        heldout_episodes: usize,
        #[arg(long, default_value_t = 99)]
        heldout_seed: u64,
    },
    /// Evaluate rephrased instructions under both encoder modes.
    Generalize {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        check: bool,
    },
    /// Train and evaluate the reward ablations.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        check: bool,
    },
    /// Replay one evaluation episode and write it as SVG.
    Render {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "lorel")]
        method: String,
        #[arg(long, default_value = "open-drawer")]
        task: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Print a saved report and optionally check its bands.
    Report {
        path: PathBuf,
        #[arg(long)]
        check: bool,
    },
}

fn seeds(p: &Pipeline, seed: Option<u64>) -> Vec<u64> {
    seed.map_or_else(|| p.config().seeds.clone(), |s| vec![s])
}

fn bands_for(r: &EvalReport) -> Vec<Band> {
    match r.kind {
        ReportKind::Eval => check_eval(r),
        ReportKind::Generalization => check_generalization(r),
        ReportKind::Ablation => check_ablation(r),
    }
}

/// Prints bands; returns whether all passed.
fn print_bands(bands: &[Band]) -> bool {
    for b in bands {
        println!("{b}");
    }
    bands.iter().all(|b| b.pass)
}

fn finish(report: &EvalReport, dir: &Path, mut bands: Vec<Band>, check: bool) -> Result<ExitCode> {
    emit_report(report, dir)?;
    print!("{}", report.table());
    println!("wrote {}", dir.display());
    bands.extend(bands_for(report));
    let ok = print_bands(&bands);
    Ok(if check && !ok { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Config => print!("{}", RunConfig::default().to_toml()?),
        Command::Collect(run) => {
            let mut p = run.pipeline()?;
            let n = p.dataset()?.len();
            println!("{} episodes in {} (sha256 {})", n, p.dataset_path().display(), p.dataset_hash()?);
        }
        Command::TrainReward { run, variant, seed } => {
            let mut p = run.pipeline()?;
            for s in seeds(&p, seed) {
                p.reward(variant.into(), s)?;
            }
        }
        Command::TrainDynamics(run) => {
            run.pipeline()?.dynamics()?;
        }
        Command::TrainBc { run, seed } => {
            let mut p = run.pipeline()?;
            for s in seeds(&p, seed) {
                p.lcbc(s)?;
            }
        }
        Command::TrainQ { run, seed } => {
            let mut p = run.pipeline()?;
            for s in seeds(&p, seed) {
                p.lcrl(s)?;
            }
        }
        Command::Eval { run, check, heldout_episodes, heldout_seed } => {
            let mut p = run.pipeline()?;
            let report = p.run_eval()?;
            let dir = p.config().output_dir.join("reports/eval");
            let mut bands = Vec::new();
            if heldout_episodes > 0 {
                let d = p.diagnostics(heldout_episodes, heldout_seed)?;
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("diagnostics.json"), d.to_json()?)?;
                bands = check_diagnostics(&d);
            }
            return finish(&report, &dir, bands, check);
        }
        Command::Generalize { run, check } => {
            let mut p = run.pipeline()?;
            let report = p.run_generalization()?;
            let dir = p.config().output_dir.join("reports/generalization");
            return finish(&report, &dir, Vec::new(), check);
        }
        Command::Ablate { run, check } => {
            let mut p = run.pipeline()?;
            let report = p.run_ablations()?;
            let dir = p.config().output_dir.join("reports/ablation");
            return finish(&report, &dir, Vec::new(), check);
        }
        Command::Render { run, method, task, seed, trial, out } => {
            let method: Method = method.parse()?;
            let task: TaskId = task.parse()?;
            let e = run.pipeline()?.episode(method, task, seed, trial)?;
            harness::render_episode(&e.trajectory, &out)?;
            println!("{method} on {task} (seed {seed}, trial {trial}): success={} -> {}", e.success, out.display());
        }
        Command::Report { path, check } => {
            let report = load_report(&path)?;
            print!("{}", report.table());
            let ok = print_bands(&bands_for(&report));
            if check && !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
