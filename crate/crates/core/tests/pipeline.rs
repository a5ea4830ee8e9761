mod common;

use lorel_core::harness::{load_report, emit_report, Method, Pipeline};
use lorel_core::sim::TaskId;

#[test]
fn reduced_pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (files_a, report_a) = common::reduced_run(a.path());
    let (files_b, report_b) = common::reduced_run(b.path());
    assert!(files_a.contains_key("dataset.jsonl"));
    assert!(files_a.keys().any(|k| k.ends_with("reward-full-s1.bin")));
    assert!(files_a.keys().any(|k| k.ends_with("dynamics.json")));
    assert_eq!(common::differing(&files_a, &files_b), Vec::<String>::new());
    assert_eq!(report_a, report_b);
}

#[test]
fn reports_round_trip_and_episodes_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::reduced_config(dir.path());
    let mut p = Pipeline::new(cfg.clone()).unwrap();
    let report = p.run_eval().unwrap();
    emit_report(&report, &dir.path().join("out")).unwrap();
    assert_eq!(load_report(&dir.path().join("out/report.json")).unwrap(), report);

    let row = report.row("lorel").unwrap();
    let task = cfg.tasks.iter().position(|&t| t == TaskId::FaucetRight).unwrap();
    let wins: usize = (0..cfg.trials as u64)
        .map(|t| p.episode(Method::Lorel, TaskId::FaucetRight, 0, t).unwrap().success as usize)
        .sum();
    assert_eq!(row.tasks[task].successes[0], wins);
}
