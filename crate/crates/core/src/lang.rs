//! Deterministic sentence encoder with an optional synonym lexicon.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sim::TaskId;

pub const EMBED_DIM: usize = 32;
/// Weight of the token-specific component relative to its synset base.
pub const TOKEN_WEIGHT: f64 = 0.1;
pub const DEFAULT_LANG_NOISE: f64 = 0.1;

const HASH_DOMAIN: &str = "lorel-lang-v1";
const BUNDLED_LEXICON: &str = include_str!("../assets/lexicon.txt");
const BUNDLED_REPHRASINGS: &str = include_str!("../assets/rephrasings.tsv");

pub type Embedding = [f64; EMBED_DIM];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderMode {
    Lexicon,
    HashOnly,
}

impl fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderMode::Lexicon => "lexicon",
            EncoderMode::HashOnly => "hash-only",
        })
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Unit-norm Gaussian direction keyed by the SHA-256 of `key`.
pub fn hash_vector(key: &str) -> Embedding {
    let mut hasher = Sha256::new();
    hasher.update(HASH_DOMAIN.as_bytes());
    hasher.update([0u8]);
    hasher.update(key.as_bytes());
    let seed: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut v = [0.0; EMBED_DIM];
    for x in &mut v {
        *x = rng.sample(StandardNormal);
    }
    normalize(&mut v);
    v
}

fn normalize(v: &mut Embedding) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Token to synonym-group mapping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lexicon {
    synsets: BTreeMap<String, String>,
}

impl Lexicon {
    /// Parses one group per line, first token being the group id. Blank lines
    /// and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut synsets = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let id = tokens.next().expect("non-empty line");
            let bad = |reason: String| Error::Asset { what: "lexicon", line: i + 1, reason };
            if tokenize(id) != [id.to_string()] {
                return Err(bad(format!("synset id `{id}` is not a single lowercase token")));
            }
            for t in std::iter::once(id).chain(tokens) {
                if tokenize(t) != [t.to_string()] {
                    return Err(bad(format!("`{t}` is not a single lowercase token")));
                }
                match synsets.get(t) {
                    Some(prev) if prev != id => {
                        return Err(bad(format!("`{t}` already belongs to synset `{prev}`")))
                    }
                    _ => {
                        synsets.insert(t.to_string(), id.to_string());
                    }
                }
            }
        }
        Ok(Lexicon { synsets })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEXICON).expect("bundled lexicon is well formed")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn synset(&self, token: &str) -> Option<&str> {
        self.synsets.get(token).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.synsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synsets.is_empty()
    }
}

/// Fixed (untrained) sentence encoder: mean of token vectors.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub mode: EncoderMode,
    lexicon: Lexicon,
}

impl Encoder {
    pub fn new(mode: EncoderMode, lexicon: Lexicon) -> Self {
        Encoder { mode, lexicon }
    }

    pub fn bundled(mode: EncoderMode) -> Self {
        Self::new(mode, Lexicon::bundled())
    }

    pub fn embed_token(&self, token: &str) -> Embedding {
        let synset = match self.mode {
            EncoderMode::Lexicon => self.lexicon.synset(token),
            EncoderMode::HashOnly => None,
        };
        match synset {
            None => hash_vector(token),
            Some(id) => {
                let mut v = hash_vector(&format!("synset/{id}"));
                let own = hash_vector(token);
                for (x, o) in v.iter_mut().zip(own) {
                    *x += TOKEN_WEIGHT * o;
                }
                normalize(&mut v);
                v
            }
        }
    }

    /// Mean token embedding; the empty sentence maps to zeros.
    pub fn encode(&self, sentence: &str) -> Embedding {
        let tokens = tokenize(sentence);
        let mut out = [0.0; EMBED_DIM];
        if tokens.is_empty() {
            return out;
        }
        for t in &tokens {
            for (o, v) in out.iter_mut().zip(self.embed_token(t)) {
                *o += v;
            }
        }
        let n = tokens.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// Encodes each distinct sentence once.
    pub fn encode_all<'a, I: IntoIterator<Item = &'a str>>(&self, sentences: I) -> HashMap<String, Embedding> {
        let mut out = HashMap::new();
        for s in sentences {
            if !out.contains_key(s) {
                out.insert(s.to_string(), self.encode(s));
            }
        }
        out
    }
}

/// Adds iid uniform noise in `[-scale, scale]` to every component.
pub fn perturb<R: Rng + ?Sized>(e: &Embedding, rng: &mut R, scale: f64) -> Embedding {
    let mut out = *e;
    if scale > 0.0 {
        for x in &mut out {
            *x += rng.random_range(-scale..=scale);
        }
    }
    out
}

/// Instruction families used in the generalization study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstructionSet {
    Original,
    UnseenVerb,
    UnseenNoun,
    UnseenVerbNoun,
    FreeForm,
}

impl InstructionSet {
    pub const ALL: [InstructionSet; 5] = [
        InstructionSet::Original,
        InstructionSet::UnseenVerb,
        InstructionSet::UnseenNoun,
        InstructionSet::UnseenVerbNoun,
        InstructionSet::FreeForm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InstructionSet::Original => "original",
            InstructionSet::UnseenVerb => "unseen-verb",
            InstructionSet::UnseenNoun => "unseen-noun",
            InstructionSet::UnseenVerbNoun => "unseen-verb-noun",
            InstructionSet::FreeForm => "free-form",
        }
    }
}

impl fmt::Display for InstructionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InstructionSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InstructionSet::ALL
            .into_iter()
            .find(|set| set.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown instruction set `{s}`")))
    }
}

/// Per-task rephrasings, grouped by instruction set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rephrasings {
    entries: BTreeMap<(TaskId, InstructionSet), Vec<String>>,
}

impl Rephrasings {
    /// Tab-separated `task, set, instruction` rows.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<(TaskId, InstructionSet), Vec<String>> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| Error::Asset { what: "rephrasings", line: i + 1, reason };
            let cols: Vec<&str> = line.split('\t').collect();
            let [task, set, instruction] = cols[..] else {
                return Err(bad(format!("expected 3 tab-separated columns, found {}", cols.len())));
            };
            let task: TaskId = task.parse().map_err(|e: Error| bad(e.to_string()))?;
            let set: InstructionSet = set.parse().map_err(|e: Error| bad(e.to_string()))?;
            if tokenize(instruction).is_empty() {
                return Err(bad("empty instruction".into()));
            }
            entries.entry((task, set)).or_default().push(instruction.trim().to_string());
        }
        Ok(Rephrasings { entries })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_REPHRASINGS).expect("bundled rephrasings are well formed")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, task: TaskId, set: InstructionSet) -> &[String] {
        self.entries.get(&(task, set)).map_or(&[], Vec::as_slice)
    }
}
