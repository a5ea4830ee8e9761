//! Random-policy offline datasets with procedural language annotation.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng_for};
use crate::sim::{self, Action, SceneState, StateVec};

pub const FORMAT_VERSION: u32 = 1;
pub const DO_NOTHING: &str = "do nothing";

pub const DRAWER_ANNOTATION_THRESHOLD: f64 = 0.01;
pub const FAUCET_ANNOTATION_THRESHOLD: f64 = PI / 20.0;
pub const MUG_ANNOTATION_THRESHOLD: f64 = 0.01;

const ACTION_STREAM: u64 = 1;
const ANNOTATION_STREAM: u64 = 2;

/// One trajectory and its instruction. Field order is the on-disk order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub seed: u64,
    pub instruction: String,
    pub states: Vec<StateVec>,
    pub actions: Vec<[f64; 2]>,
}

impl Episode {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn first(&self) -> &StateVec {
        &self.states[0]
    }

    pub fn last(&self) -> &StateVec {
        &self.states[self.states.len() - 1]
    }

    /// Re-simulates the stored actions and compares states bit-for-bit.
    pub fn replays_exactly(&self) -> bool {
        if self.states.len() != self.actions.len() + 1 {
            return false;
        }
        let mut s = SceneState::from_vector(&self.states[0]);
        for (a, expected) in self.actions.iter().zip(&self.states[1..]) {
            s = sim::step(&s, Action { delta: *a });
            if s.to_vector() != *expected {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub episodes: Vec<Episode>,
    pub horizon: usize,
    pub format_version: u32,
}

/// Sidecar metadata stored next to a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub horizon: usize,
    pub episodes: usize,
}

impl Dataset {
    pub fn new(episodes: Vec<Episode>, horizon: usize) -> Self {
        Dataset { episodes, horizon, format_version: FORMAT_VERSION }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn unique_instructions(&self) -> BTreeSet<&str> {
        self.episodes.iter().map(|e| e.instruction.as_str()).collect()
    }

    /// Splits by episode into (train, held-out); every tenth episode is held out.
    pub fn split_holdout(&self) -> (Dataset, Dataset) {
        let (held, train): (Vec<_>, Vec<_>) = self
            .episodes
            .iter()
            .cloned()
            .enumerate()
            .partition(|(i, _)| i % 10 == 9);
        let strip = |v: Vec<(usize, Episode)>| v.into_iter().map(|(_, e)| e).collect();
        (Dataset::new(strip(train), self.horizon), Dataset::new(strip(held), self.horizon))
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for e in &self.episodes {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(bytes: &[u8]) -> Result<Dataset> {
        let mut episodes = Vec::new();
        for (i, line) in BufReader::new(bytes).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Episode = serde_json::from_str(&line)
                .map_err(|source| Error::DatasetLine { line: i + 1, source })?;
            episodes.push(e);
        }
        let horizon = episodes.first().map_or(0, Episode::horizon);
        if let Some(bad) = episodes.iter().position(|e| e.horizon() != horizon) {
            return Err(Error::Config(format!(
                "episode {bad} has horizon {} but the dataset uses {horizon}",
                episodes[bad].horizon()
            )));
        }
        Ok(Dataset::new(episodes, horizon))
    }

    /// SHA-256 of the JSONL encoding, identical to the hash of a saved file.
    pub fn content_hash(&self) -> Result<String> {
        Ok(crate::artifact::sha256_hex(&self.to_jsonl()?))
    }

    /// Writes the JSONL file plus its `.meta.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_jsonl()?)?;
        w.flush()?;
        let meta = DatasetMeta {
            format_version: self.format_version,
            horizon: self.horizon,
            episodes: self.len(),
        };
        fs::write(meta_path(path), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let meta_file = meta_path(path);
        if meta_file.exists() {
            let meta: DatasetMeta = serde_json::from_slice(&fs::read(&meta_file)?)?;
            if meta.format_version != FORMAT_VERSION {
                return Err(Error::Version { found: meta.format_version, expected: FORMAT_VERSION });
            }
        }
        Dataset::from_jsonl(&fs::read(path)?)
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn simulate_episode(seed: u64, horizon: usize) -> Episode {
    let mut rng = rng_for(seed, &[ACTION_STREAM]);
    let mut s = sim::reset(seed);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    states.push(s.to_vector());
    for _ in 0..horizon {
        let a = sim::random_action(&mut rng);
        s = sim::step(&s, a);
        actions.push(a.delta);
        states.push(s.to_vector());
    }
    let mut e = Episode { seed, instruction: String::new(), states, actions };
    e.instruction = annotate_episode(&e);
    e
}

/// Runs the uniform random policy for `n_episodes` episodes of `horizon` steps.
pub fn collect(n_episodes: usize, horizon: usize, seed: u64) -> Dataset {
    let episodes = (0..n_episodes as u64)
        .into_par_iter()
        .map(|i| simulate_episode(derive_seed(seed, &[i]), horizon))
        .collect();
    Dataset::new(episodes, horizon)
}

fn mug_phrase(color: &str, delta: [f64; 2]) -> String {
    let dir = if delta[0].abs() >= delta[1].abs() {
        if delta[0] > 0.0 { "right" } else { "left" }
    } else if delta[1] > 0.0 {
        "up"
    } else {
        "down"
    };
    format!("move {color} mug {dir}")
}

/// Describes the start-to-end object changes of an episode.
pub fn annotate_episode(e: &Episode) -> String {
    let s0 = SceneState::from_vector(e.first());
    let s1 = SceneState::from_vector(e.last());
    let mut phrases = Vec::new();

    let d_drawer = s1.drawer_ext - s0.drawer_ext;
    if d_drawer.abs() > DRAWER_ANNOTATION_THRESHOLD {
        phrases.push(if d_drawer > 0.0 { "open drawer" } else { "close drawer" }.to_string());
    }
    let d_faucet = s1.faucet_angle - s0.faucet_angle;
    if d_faucet.abs() > FAUCET_ANNOTATION_THRESHOLD {
        phrases.push(
            if d_faucet > 0.0 { "turn faucet left" } else { "turn faucet right" }.to_string(),
        );
    }
    for (color, a, b) in [("black", s0.black_mug, s1.black_mug), ("white", s0.white_mug, s1.white_mug)] {
        let delta = sim::sub(b, a);
        if sim::norm(delta) > MUG_ANNOTATION_THRESHOLD {
            phrases.push(mug_phrase(color, delta));
        }
    }

    if phrases.is_empty() {
        return DO_NOTHING.to_string();
    }
    phrases.shuffle(&mut rng_for(e.seed, &[ANNOTATION_STREAM]));
    phrases.join(" and ")
}

/// Drops episodes annotated as doing nothing, keeping survivor order.
pub fn filter_dataset(d: &Dataset) -> Dataset {
    let episodes = d.episodes.iter().filter(|e| e.instruction != DO_NOTHING).cloned().collect();
    Dataset::new(episodes, d.horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode_with(start: SceneState, end: SceneState, seed: u64) -> Episode {
        Episode {
            seed,
            instruction: String::new(),
            states: vec![start.to_vector(), end.to_vector()],
            actions: vec![[0.0, 0.0]],
        }
    }

    #[test]
    fn annotation_templates() {
        let s0 = sim::reset(1);
        assert_eq!(annotate_episode(&episode_with(s0, s0, 0)), DO_NOTHING);

        let mut s1 = s0;
        s1.drawer_ext += 0.05;
        assert_eq!(annotate_episode(&episode_with(s0, s1, 0)), "open drawer");

        s1.black_mug[0] += 0.03;
        let mut orders = BTreeSet::new();
        for seed in 0..32 {
            let text = annotate_episode(&episode_with(s0, s1, seed));
            let mut parts: Vec<_> = text.split(" and ").collect();
            orders.insert(text.clone());
            parts.sort();
            assert_eq!(parts, vec!["move black mug right", "open drawer"]);
        }
        assert_eq!(orders.len(), 2, "both shuffle orders should appear");
    }

    #[test]
    fn mug_direction_uses_dominant_axis() {
        assert_eq!(mug_phrase("white", [0.01, -0.03]), "move white mug down");
        assert_eq!(mug_phrase("white", [-0.03, 0.01]), "move white mug left");
        assert_eq!(mug_phrase("black", [0.0, 0.02]), "move black mug up");
    }

    #[test]
    fn faucet_phrases() {
        let s0 = sim::reset(2);
        let mut s1 = s0;
        s1.faucet_angle += 0.2;
        assert_eq!(annotate_episode(&episode_with(s0, s1, 0)), "turn faucet left");
        s1.faucet_angle = s0.faucet_angle - 0.2;
        assert_eq!(annotate_episode(&episode_with(s0, s1, 0)), "turn faucet right");
        s1.faucet_angle = s0.faucet_angle - 0.1;
        assert_eq!(annotate_episode(&episode_with(s0, s1, 0)), DO_NOTHING);
    }

    #[test]
    fn collect_is_deterministic_and_replayable() {
        let a = collect(4, 20, 9);
        let b = collect(4, 20, 9);
        assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
        for e in &a.episodes {
            assert_eq!(e.states.len(), 21);
            assert!(e.replays_exactly());
            assert!(!e.instruction.is_empty());
        }
        assert_ne!(collect(4, 20, 10), a);
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let d = collect(3, 5, 1);
        let bytes = d.to_jsonl().unwrap();
        let back = Dataset::from_jsonl(&bytes).unwrap();
        assert_eq!(back, d);
        let first_line = std::str::from_utf8(&bytes).unwrap().lines().next().unwrap();
        let v: serde_json::Value = serde_json::from_str(first_line).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["actions", "instruction", "seed", "states"]);
    }

    #[test]
    fn filtering() {
        let s0 = sim::reset(4);
        let idle = Episode { instruction: DO_NOTHING.into(), ..episode_with(s0, s0, 0) };
        let busy = Episode { instruction: "open drawer".into(), ..episode_with(s0, s0, 1) };
        let only_idle = Dataset::new(vec![idle.clone(), idle.clone()], 1);
        assert!(filter_dataset(&only_idle).is_empty());
        let mixed = Dataset::new(vec![idle.clone(), busy.clone(), idle, busy.clone()], 1);
        let kept = filter_dataset(&mixed);
        assert_eq!(kept.episodes, vec![busy.clone(), busy]);
    }

    #[test]
    fn malformed_line_is_reported() {
        let err = Dataset::from_jsonl(b"{\"seed\": 1}\n").unwrap_err();
        assert!(matches!(err, Error::DatasetLine { line: 1, .. }));
    }
}
