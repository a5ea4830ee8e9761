use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::TaskId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Eval,
    Generalization,
    Ablation,
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportKind::Eval => "eval",
            ReportKind::Generalization => "generalization",
            ReportKind::Ablation => "ablation",
        })
    }
}

/// Mean and standard error of a success rate across seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedStat {
    pub mean: f64,
    pub std_error: f64,
}

impl SeedStat {
    /// Standard error uses the sample deviation; a single seed reports 0.
    pub fn of(rates: &[f64]) -> Self {
        let n = rates.len() as f64;
        if rates.is_empty() {
            return SeedStat { mean: 0.0, std_error: 0.0 };
        }
        let mean = rates.iter().sum::<f64>() / n;
        if rates.len() < 2 {
            return SeedStat { mean, std_error: 0.0 };
        }
        let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        SeedStat { mean, std_error: (var / n).sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCell {
    pub task: TaskId,
    /// Successes per seed, each out of the report's `trials`.
    pub successes: Vec<usize>,
    pub rate: SeedStat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub tasks: Vec<TaskCell>,
    /// Task-averaged success rate, aggregated across seeds.
    pub average: SeedStat,
}

impl ReportRow {
    /// `counts[seed][task]` successes out of `trials`.
    pub fn from_counts(name: &str, tasks: &[TaskId], counts: &[Vec<usize>], trials: usize) -> Self {
        let t = trials as f64;
        let cells = tasks
            .iter()
            .enumerate()
            .map(|(i, &task)| {
                let successes: Vec<usize> = counts.iter().map(|c| c[i]).collect();
                let rates: Vec<f64> = successes.iter().map(|&k| k as f64 / t).collect();
                TaskCell { task, successes, rate: SeedStat::of(&rates) }
            })
            .collect();
        let per_seed: Vec<f64> =
            counts.iter().map(|c| c.iter().map(|&k| k as f64 / t).sum::<f64>() / tasks.len() as f64).collect();
        ReportRow { name: name.to_string(), tasks: cells, average: SeedStat::of(&per_seed) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub kind: ReportKind,
    pub code_version: String,
    pub config_hash: String,
    pub dataset_hash: String,
    /// Checkpoint name to SHA-256 of its weights file.
    pub checkpoints: BTreeMap<String, String>,
    pub tasks: Vec<TaskId>,
    pub seeds: Vec<u64>,
    pub trials: usize,
    pub rows: Vec<ReportRow>,
    pub wall_clock_secs: f64,
}

impl EvalReport {
    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Task-averaged success rate of a row.
    pub fn average(&self, name: &str) -> Option<f64> {
        self.row(name).map(|r| r.average.mean)
    }

    /// The same report with the wall-clock field zeroed.
    pub fn without_timing(&self) -> Self {
        EvalReport { wall_clock_secs: 0.0, ..self.clone() }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    /// Plain-text table of task rates with the averages.
    pub fn table(&self) -> String {
        let mut out = format!("{:<28}", "");
        for t in &self.tasks {
            out += &format!("{:>16}", t.name());
        }
        out += &format!("{:>16}\n", "average");
        for row in &self.rows {
            out += &format!("{:<28}", row.name);
            for c in &row.tasks {
                out += &format!("{:>16}", format!("{:.1}", 100.0 * c.rate.mean));
            }
            out += &format!("{:>16}\n", format!("{:.1} ± {:.1}", 100.0 * row.average.mean, 100.0 * row.average.std_error));
        }
        out
    }
}

/// Method-by-task matrix of fractional success rates.
pub fn summary_csv(r: &EvalReport) -> String {
    let mut out = String::from("method");
    for t in &r.tasks {
        out.push(',');
        out.push_str(t.name());
    }
    out.push('\n');
    for row in &r.rows {
        out.push_str(&row.name);
        for c in &row.tasks {
            out.push_str(&format!(",{}", c.rate.mean));
        }
        out.push('\n');
    }
    out
}

/// Writes `report.json` and `summary.csv` into `dir`.
pub fn emit_report(r: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), r.to_json()?)?;
    fs::write(dir.join("summary.csv"), summary_csv(r))?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let r: EvalReport = serde_json::from_slice(&fs::read(path)?)?;
    if r.schema_version != super::SCHEMA_VERSION {
        return Err(Error::Version { found: r.schema_version, expected: super::SCHEMA_VERSION });
    }
    Ok(r)
}
