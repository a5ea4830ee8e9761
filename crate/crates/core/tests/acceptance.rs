//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! The desk protocol runs in a persistent directory (`LOREL_ACCEPTANCE_DIR`,
//! default under the cargo target dir) so trained models are reused across
//! invocations. Failing criteria are printed, not hidden; the process exits
//! non-zero on failure only when `LOREL_ACCEPTANCE_STRICT` is set.

mod common;

use std::f64::consts::LN_2;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use lorel_core::harness::{
    check_ablation, check_diagnostics, check_eval, check_generalization, Band, EvalReport, Pipeline, RunConfig,
};
use lorel_core::nn::Matrix;
use lorel_core::planner::PlanConfig;
use lorel_core::reward::{bce_loss, RewardModel, RewardTrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn line(criterion: u8, name: &str, pass: bool, detail: String) -> Band {
    Band { criterion: Some(criterion), name: name.to_string(), pass, detail }
}

fn gradients() -> Vec<Band> {
    let t = Instant::now();
    let suite = common::gradient_suite(5);
    let secs = t.elapsed().as_secs_f64();
    let mut out: Vec<Band> = suite
        .iter()
        .map(|(name, c)| {
            line(
                1,
                &format!("{name} gradient relative error < 1e-4"),
                c.max_rel_error < 1e-4,
                format!("max {:.2e} over {} parameters, h = 1e-5", c.max_rel_error, c.checked),
            )
        })
        .collect();
    out.push(line(1, "gradient checks finish in < 10 s", secs < 10.0, format!("{secs:.2} s")));
    out
}

fn uniform_bce() -> Band {
    let m = RewardModel::untrained(&RewardTrainConfig::default(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 256;
    let mut probs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let s0: [f64; 9] = std::array::from_fn(|_| rng.random_range(0.0..0.6));
        let s: [f64; 9] = std::array::from_fn(|_| rng.random_range(0.0..0.6));
        probs.push(m.reward(&s0, &s, "turn the faucet left"));
        labels.push(if rng.random::<bool>() { 1.0 } else { 0.0 });
    }
    let (loss, _) = bce_loss(&Matrix::from_vec(n, 1, probs), &labels);
    line(2, "uniform-output bce equals ln 2", (loss - LN_2).abs() <= 1e-9, format!("loss {loss:.12}, |diff| {:.1e}", (loss - LN_2).abs()))
}

fn cem_quadratic() -> Vec<Band> {
    let cfg = PlanConfig::sim();
    let t = Instant::now();
    let errors: Vec<f64> = (0..100).map(|s| common::cem_quadratic_error(s, &cfg)).collect();
    let secs = t.elapsed().as_secs_f64();
    let hits = errors.iter().filter(|&&e| e <= 0.02).count();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    vec![
        line(
            3,
            "cem free-space quadratic within 0.02 in >= 95/100 runs",
            hits >= 95,
            format!("{hits}/100 (M={}, H={}, {} iters), worst {worst:.4}", cfg.samples, cfg.horizon, cfg.cem_iters),
        ),
        line(3, "100 cem runs finish in < 1 min", secs < 60.0, format!("{secs:.1} s")),
    ]
}

fn desk_dir() -> PathBuf {
    std::env::var_os("LOREL_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk"))
}

fn print_table(r: &EvalReport) {
    for l in r.table().lines() {
        println!("    {l}");
    }
}

fn desk() -> Vec<Band> {
    let dir = desk_dir();
    println!("desk protocol in {}", dir.display());
    let mut p = Pipeline::new(RunConfig::desk(&dir)).unwrap().verbose(true);
    let mut out = Vec::new();

    let eval = p.run_eval().unwrap();
    print_table(&eval);
    out.extend(check_eval(&eval));

    let gen = p.run_generalization().unwrap();
    print_table(&gen);
    out.extend(check_generalization(&gen));

    let abl = p.run_ablations().unwrap();
    print_table(&abl);
    out.extend(check_ablation(&abl));

    out.extend(check_diagnostics(&p.diagnostics(1000, 99).unwrap()));
    out
}

fn determinism() -> Vec<Band> {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (files_a, report_a) = common::reduced_run(a.path());
    let (files_b, report_b) = common::reduced_run(b.path());
    let diff = common::differing(&files_a, &files_b);
    vec![
        line(
            10,
            "dataset and checkpoints byte-identical across runs",
            diff.is_empty(),
            if diff.is_empty() { format!("{} files compared", files_a.len()) } else { format!("differ: {}", diff.join(", ")) },
        ),
        line(
            10,
            "report.json byte-identical excluding timing",
            report_a == report_b,
            format!("{} bytes", report_a.len()),
        ),
    ]
}

fn main() -> ExitCode {
    // libtest-style flags (e.g. `--nocapture`, filters) are passed through by cargo; ignore them.
    let started = Instant::now();
    let mut bands = gradients();
    bands.push(uniform_bce());
    bands.extend(cem_quadratic());
    bands.extend(desk());
    bands.extend(determinism());
    bands.sort_by_key(|b| b.criterion.unwrap_or(u8::MAX));

    println!();
    for b in &bands {
        println!("{b}");
    }
    let failed = bands.iter().filter(|b| !b.pass).count();
    println!("acceptance: {} passed, {failed} failed in {:.0} s", bands.len() - failed, started.elapsed().as_secs_f64());
    if failed > 0 && std::env::var_os("LOREL_ACCEPTANCE_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
