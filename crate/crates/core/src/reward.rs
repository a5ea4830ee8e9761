//! Language-conditioned reward classifier over (initial state, state, instruction).

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lang::{perturb, Embedding, Encoder, EncoderMode, EMBED_DIM};
use crate::nn::{Activation, AdamState, Matrix, Mlp, MlpSpec, Standardizer};
use crate::planner::RewardFn;
use crate::seeding::{derive_seed, rng_for};
use crate::sim::{StateVec, STATE_DIM};

pub const INPUT_DIM: usize = 2 * STATE_DIM + EMBED_DIM;
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardTrainConfig {
    /// Positive window fraction; only used when `noisy_positives` is set.
    pub alpha: f64,
    pub noisy_positives: bool,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub state_noise_sigma: f64,
    pub lang_noise_scale: f64,
    pub use_cross_negatives: bool,
    pub use_flipped_negatives: bool,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Steps between accuracy evaluations (and checkpoint selection).
    pub eval_every: usize,
    /// Size of the fixed example sets used for accuracy curves.
    pub eval_examples: usize,
    pub encoder_mode: EncoderMode,
}

impl Default for RewardTrainConfig {
    fn default() -> Self {
        RewardTrainConfig {
            alpha: 0.25,
            noisy_positives: false,
            batch_size: 32,
            learning_rate: 1e-4,
            steps: 50_000,
            state_noise_sigma: 0.005,
            lang_noise_scale: 0.1,
            use_cross_negatives: true,
            use_flipped_negatives: true,
            hidden: vec![128, 128, 128],
            dropout: 0.2,
            eval_every: 1000,
            eval_examples: 2048,
            encoder_mode: EncoderMode::Lexicon,
        }
    }
}

impl RewardTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("reward: {m}")));
        if self.batch_size == 0 || self.batch_size % 4 != 0 {
            return bad("batch_size must be a positive multiple of 4");
        }
        if !(0.0..0.5).contains(&self.alpha) {
            return bad("alpha must lie in [0, 0.5)");
        }
        if !self.use_cross_negatives && !self.use_flipped_negatives {
            return bad("at least one negative type is required");
        }
        if self.eval_every == 0 || self.eval_examples == 0 {
            return bad("eval_every and eval_examples must be positive");
        }
        if self.state_noise_sigma < 0.0 || self.lang_noise_scale < 0.0 {
            return bad("noise scales must be non-negative");
        }
        Ok(())
    }

    pub fn effective_alpha(&self) -> f64 {
        if self.noisy_positives {
            self.alpha
        } else {
            0.0
        }
    }

    pub fn net_spec(&self) -> MlpSpec {
        MlpSpec::relu_net(INPUT_DIM, &self.hidden, 1, Activation::Sigmoid, self.dropout)
    }

    /// (positives, cross negatives, flipped negatives) per batch.
    pub fn composition(&self) -> (usize, usize, usize) {
        let half = self.batch_size / 2;
        match (self.use_cross_negatives, self.use_flipped_negatives) {
            (true, true) => (half, half / 2, half - half / 2),
            (true, false) => (half, half, 0),
            (false, true) => (half, 0, half),
            (false, false) => (half, 0, 0),
        }
    }
}

/// One labelled training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Example<'a> {
    pub s0: StateVec,
    pub s: StateVec,
    pub instruction: &'a str,
    pub label: f64,
}

/// Positive pair `(s_i, s_j)` with `i <= floor(alpha T)` and `j >= ceil((1 - alpha) T)`.
pub fn sample_positive<'a, R: Rng + ?Sized>(d: &'a Dataset, alpha: f64, rng: &mut R) -> Example<'a> {
    let e = &d.episodes[rng.random_range(0..d.len())];
    let t = e.horizon();
    let i_max = (alpha * t as f64).floor() as usize;
    let j_min = ((1.0 - alpha) * t as f64).ceil() as usize;
    let i = rng.random_range(0..=i_max);
    let j = rng.random_range(j_min.max(i + 1)..=t);
    Example { s0: e.states[i], s: e.states[j], instruction: &e.instruction, label: 1.0 }
}

/// Endpoints of an episode annotated differently from `instruction`, labelled
/// with `instruction` as a negative.
pub fn sample_cross_negative<'a, R: Rng + ?Sized>(
    d: &Dataset,
    instruction: &'a str,
    rng: &mut R,
) -> Result<Example<'a>> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for _ in 0..1000 {
        let e = &d.episodes[rng.random_range(0..d.len())];
        if e.instruction != instruction {
            return Ok(Example { s0: *e.first(), s: *e.last(), instruction, label: 0.0 });
        }
    }
    let others: Vec<_> = d.episodes.iter().filter(|e| e.instruction != instruction).collect();
    if others.is_empty() {
        return Err(Error::SingleInstruction(instruction.to_string()));
    }
    let e = others[rng.random_range(0..others.len())];
    Ok(Example { s0: *e.first(), s: *e.last(), instruction, label: 0.0 })
}

/// The same pair in reverse temporal order, labelled negative.
pub fn flipped_negative<'a>(pos: &Example<'a>) -> Example<'a> {
    Example { s0: pos.s, s: pos.s0, instruction: pos.instruction, label: 0.0 }
}

/// Samples one training batch: half positives, the rest split across the
/// enabled negative types, with Gaussian noise on every state.
pub fn build_batch<'a, R: Rng + ?Sized>(
    d: &'a Dataset,
    cfg: &RewardTrainConfig,
    rng: &mut R,
) -> Result<Vec<Example<'a>>> {
    sample_examples(d, cfg, cfg.state_noise_sigma, rng)
}

fn sample_examples<'a, R: Rng + ?Sized>(
    d: &'a Dataset,
    cfg: &RewardTrainConfig,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<Example<'a>>> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let alpha = cfg.effective_alpha();
    let (n_pos, n_cross, n_flip) = cfg.composition();
    let mut out = Vec::with_capacity(n_pos + n_cross + n_flip);
    for _ in 0..n_pos {
        out.push(sample_positive(d, alpha, rng));
    }
    for _ in 0..n_cross {
        let l = &d.episodes[rng.random_range(0..d.len())].instruction;
        out.push(sample_cross_negative(d, l, rng)?);
    }
    for _ in 0..n_flip {
        let pos = sample_positive(d, alpha, rng);
        out.push(flipped_negative(&pos));
    }
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("finite sigma");
        for ex in &mut out {
            for v in ex.s0.iter_mut().chain(ex.s.iter_mut()) {
                *v += noise.sample(rng);
            }
        }
    }
    Ok(out)
}

/// Mean binary cross-entropy of sigmoid outputs `r` against `labels`, and its
/// gradient with respect to `r`.
pub fn bce_loss(r: &Matrix, labels: &[f64]) -> (f64, Matrix) {
    assert_eq!(r.data.len(), labels.len(), "one output per label");
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(r.rows, r.cols);
    for ((p, y), g) in r.data.iter().zip(labels).zip(&mut grad.data) {
        let c = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss -= y * c.ln() + (1.0 - y) * (1.0 - c).ln();
        // Unclamped gradient: multiplied by the sigmoid derivative in backprop
        // this becomes (r - y) / n, so saturated wrong outputs still learn.
        let denom = (p * (1.0 - p)).max(f64::MIN_POSITIVE);
        *g = (p - y) / denom / n;
    }
    (loss / n, grad)
}

/// Balanced accuracy at threshold 0.5.
pub fn balanced_accuracy(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (s, y) in scores.iter().zip(labels) {
        if *y > 0.5 {
            pos += 1;
            tp += usize::from(*s > 0.5);
        } else {
            neg += 1;
            tn += usize::from(*s <= 0.5);
        }
    }
    let rate = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    0.5 * (rate(tp, pos) + rate(tn, neg))
}

/// Trained classifier plus the fixed preprocessing it expects.
#[derive(Clone, Debug)]
pub struct RewardModel {
    pub net: Mlp,
    pub norm: Standardizer,
    pub encoder: Encoder,
}

impl RewardModel {
    /// Freshly initialized network with a zeroed output layer (reward 0.5 everywhere).
    pub fn untrained(cfg: &RewardTrainConfig, seed: u64) -> Result<Self> {
        let mut net = Mlp::new(cfg.net_spec(), seed)?;
        net.zero_output_layer();
        Ok(RewardModel {
            net,
            norm: Standardizer::identity(STATE_DIM),
            encoder: Encoder::bundled(cfg.encoder_mode),
        })
    }

    fn write_row(&self, s0: &StateVec, s: &StateVec, emb: &Embedding, out: &mut [f64]) {
        self.norm.apply(s0, &mut out[..STATE_DIM]);
        self.norm.apply(s, &mut out[STATE_DIM..2 * STATE_DIM]);
        out[2 * STATE_DIM..].copy_from_slice(emb);
    }

    fn features(&self, rows: &[(&StateVec, &StateVec, Embedding)]) -> Matrix {
        let mut x = Matrix::zeros(rows.len(), INPUT_DIM);
        for (r, (s0, s, emb)) in rows.iter().enumerate() {
            self.write_row(s0, s, emb, x.row_mut(r));
        }
        x
    }

    pub fn reward(&self, s0: &StateVec, s: &StateVec, instruction: &str) -> f64 {
        self.rewards(s0, std::slice::from_ref(s), instruction)[0]
    }

    /// Scores labelled examples without noise or dropout.
    pub fn score_examples(&self, examples: &[Example<'_>], embeddings: &HashMap<String, Embedding>) -> Vec<f64> {
        let rows: Vec<_> = examples
            .iter()
            .map(|e| (&e.s0, &e.s, lookup(embeddings, &self.encoder, e.instruction)))
            .collect();
        self.net.predict(&self.features(&rows)).expect("reward input width").data
    }
}

fn lookup(embeddings: &HashMap<String, Embedding>, encoder: &Encoder, l: &str) -> Embedding {
    embeddings.get(l).copied().unwrap_or_else(|| encoder.encode(l))
}

impl RewardFn for RewardModel {
    fn rewards(&self, s0: &StateVec, finals: &[StateVec], instruction: &str) -> Vec<f64> {
        let emb = self.encoder.encode(instruction);
        let mut x = Matrix::zeros(finals.len(), INPUT_DIM);
        for (r, s) in finals.iter().enumerate() {
            self.write_row(s0, s, &emb, x.row_mut(r));
        }
        self.net.predict(&x).expect("reward input width").data
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardCurvePoint {
    pub step: usize,
    /// Mean training loss since the previous point.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub heldout_accuracy: f64,
}

/// Everything needed to rebuild a reward model besides the raw weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardManifest {
    pub encoder_mode: EncoderMode,
    pub embed_dim: usize,
    pub seed: u64,
    pub config: RewardTrainConfig,
    pub dataset_hash: String,
    pub norm: Standardizer,
    pub best_step: usize,
    pub best_heldout_accuracy: f64,
    pub curve: Vec<RewardCurvePoint>,
}

#[derive(Clone, Debug)]
pub struct RewardTraining {
    pub model: RewardModel,
    pub manifest: RewardManifest,
}

impl RewardTraining {
    pub fn save(&self, dir: &Path, name: &str) -> Result<String> {
        artifact::save_model(dir, name, &self.model.net, &self.manifest)
    }
}

/// Loads a saved reward model; returns it with its manifest and checkpoint hash.
pub fn load_reward(dir: &Path, name: &str) -> Result<(RewardModel, RewardManifest, String)> {
    let (net, manifest, hash): (Mlp, RewardManifest, String) = artifact::load_model(dir, name)?;
    if manifest.embed_dim != EMBED_DIM || net.input_dim() != INPUT_DIM {
        return Err(Error::Shape { expected: INPUT_DIM, got: net.input_dim() });
    }
    let model = RewardModel { net, norm: manifest.norm.clone(), encoder: Encoder::bundled(manifest.encoder_mode) };
    Ok((model, manifest, hash))
}

/// Fits the classifier on a 90/10 episode split and keeps the checkpoint with
/// the best held-out balanced accuracy.
pub fn train(d: &Dataset, cfg: &RewardTrainConfig, seed: u64) -> Result<RewardTraining> {
    cfg.validate()?;
    let (train_set, held_set) = d.split_holdout();
    if train_set.is_empty() || held_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let norm = Standardizer::fit(
        STATE_DIM,
        train_set.episodes.iter().flat_map(|e| e.states.iter().map(|s| &s[..])),
    );
    let encoder = Encoder::bundled(cfg.encoder_mode);
    let embeddings = encoder.encode_all(d.episodes.iter().map(|e| e.instruction.as_str()));
    let mut model = RewardModel { net: Mlp::new(cfg.net_spec(), derive_seed(seed, &[0]))?, norm, encoder };

    let eval_set = |set: &Dataset, key: u64| -> Result<(Vec<f64>, Matrix)> {
        let mut rng = rng_for(seed, &[key]);
        let mut examples = Vec::with_capacity(cfg.eval_examples);
        while examples.len() < cfg.eval_examples {
            examples.extend(sample_examples(set, cfg, 0.0, &mut rng)?);
        }
        examples.truncate(cfg.eval_examples);
        let rows: Vec<_> = examples.iter().map(|e| (&e.s0, &e.s, embeddings[e.instruction])).collect();
        Ok((examples.iter().map(|e| e.label).collect(), model.features(&rows)))
    };
    let (held_labels, held_x) = eval_set(&held_set, 1)?;
    let (train_labels, train_x) = eval_set(&train_set, 2)?;

    let mut rng = rng_for(seed, &[3]);
    let mut adam = AdamState::new(&model.net.spec, cfg.learning_rate);
    let mut curve = Vec::new();
    let mut best = (model.net.clone(), 0usize, f64::NEG_INFINITY);
    let mut loss_acc = 0.0;
    let mut loss_n = 0usize;
    let mut labels = Vec::with_capacity(cfg.batch_size);
    for step in 1..=cfg.steps {
        let batch = build_batch(&train_set, cfg, &mut rng)?;
        let mut x = Matrix::zeros(batch.len(), INPUT_DIM);
        labels.clear();
        for (r, ex) in batch.iter().enumerate() {
            let emb = perturb(&embeddings[ex.instruction], &mut rng, cfg.lang_noise_scale);
            model.write_row(&ex.s0, &ex.s, &emb, x.row_mut(r));
            labels.push(ex.label);
        }
        let (out, cache) = model.net.forward(&x, true, &mut rng)?;
        let (loss, grad) = bce_loss(&out, &labels);
        let grads = model.net.backward(&cache, &grad);
        adam.step(&mut model.net.params, &grads);
        loss_acc += loss;
        loss_n += 1;

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let held = balanced_accuracy(&model.net.predict(&held_x)?.data, &held_labels);
            let tr = balanced_accuracy(&model.net.predict(&train_x)?.data, &train_labels);
            curve.push(RewardCurvePoint {
                step,
                train_loss: loss_acc / loss_n as f64,
                train_accuracy: tr,
                heldout_accuracy: held,
            });
            loss_acc = 0.0;
            loss_n = 0;
            if held >= best.2 {
                best = (model.net.clone(), step, held);
            }
        }
    }
    let (best_net, best_step, best_acc) = best;
    if cfg.steps > 0 {
        model.net = best_net;
    }
    let manifest = RewardManifest {
        encoder_mode: cfg.encoder_mode,
        embed_dim: EMBED_DIM,
        seed,
        config: cfg.clone(),
        dataset_hash: d.content_hash()?,
        norm: model.norm.clone(),
        best_step,
        best_heldout_accuracy: if cfg.steps > 0 { best_acc } else { 0.0 },
        curve,
    };
    Ok(RewardTraining { model, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Episode;
    use crate::nn::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn episode(tag: f64, instruction: &str, t: usize) -> Episode {
        let states = (0..=t).map(|k| [tag, k as f64, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0]).collect();
        Episode { seed: 0, instruction: instruction.into(), states, actions: vec![[0.0; 2]; t] }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn alpha_zero_uses_endpoints() {
        let d = Dataset::new(vec![episode(0.0, "a", 20)], 20);
        for _ in 0..50 {
            let ex = sample_positive(&d, 0.0, &mut rng());
            assert_eq!((ex.s0[1], ex.s[1]), (0.0, 20.0));
        }
    }

    #[test]
    fn alpha_quarter_covers_all_36_pairs() {
        let d = Dataset::new(vec![episode(0.0, "a", 20)], 20);
        let mut seen = std::collections::BTreeSet::new();
        let mut r = rng();
        for _ in 0..5000 {
            let ex = sample_positive(&d, 0.25, &mut r);
            let (i, j) = (ex.s0[1] as usize, ex.s[1] as usize);
            assert!(i <= 5 && j >= 15);
            seen.insert((i, j));
        }
        assert_eq!(seen.len(), 36);
    }

    #[test]
    fn cross_negative_uses_other_episode() {
        let d = Dataset::new(vec![episode(1.0, "A", 4), episode(2.0, "B", 4)], 4);
        let ex = sample_cross_negative(&d, "A", &mut rng()).unwrap();
        assert_eq!(ex.instruction, "A");
        assert_eq!(ex.s0[0], 2.0);
        assert_eq!(ex.label, 0.0);
        let same = Dataset::new(vec![episode(1.0, "A", 4), episode(2.0, "A", 4)], 4);
        assert!(matches!(sample_cross_negative(&same, "A", &mut rng()), Err(Error::SingleInstruction(_))));
    }

    #[test]
    fn flipping_is_an_involution_on_states() {
        let d = Dataset::new(vec![episode(0.0, "open drawer", 20)], 20);
        let pos = sample_positive(&d, 0.0, &mut rng());
        let f = flipped_negative(&pos);
        assert_eq!((f.s0, f.s, f.instruction, f.label), (pos.s, pos.s0, "open drawer", 0.0));
        let ff = flipped_negative(&f);
        assert_eq!((ff.s0, ff.s), (pos.s0, pos.s));
    }

    #[test]
    fn batch_composition_follows_flags() {
        let d = Dataset::new(vec![episode(1.0, "A", 4), episode(2.0, "B", 4)], 4);
        let mut cfg = RewardTrainConfig { state_noise_sigma: 0.0, ..Default::default() };
        let count = |cfg: &RewardTrainConfig| {
            let b = build_batch(&d, cfg, &mut rng()).unwrap();
            let pos = b.iter().filter(|e| e.label == 1.0).count();
            // Flipped negatives run backwards in time (second coordinate decreases).
            let flipped = b.iter().filter(|e| e.label == 0.0 && e.s[1] < e.s0[1]).count();
            (pos, b.len() - pos - flipped, flipped)
        };
        assert_eq!(count(&cfg), (16, 8, 8));
        cfg.use_flipped_negatives = false;
        assert_eq!(count(&cfg), (16, 16, 0));
        cfg.use_flipped_negatives = true;
        cfg.use_cross_negatives = false;
        assert_eq!(count(&cfg), (16, 0, 16));
    }

    #[test]
    fn zero_noise_keeps_raw_values() {
        let d = Dataset::new(vec![episode(1.0, "A", 4), episode(2.0, "B", 4)], 4);
        let cfg = RewardTrainConfig { state_noise_sigma: 0.0, ..Default::default() };
        for ex in build_batch(&d, &cfg, &mut rng()).unwrap() {
            let e = d.episodes.iter().find(|e| e.states[0][0] == ex.s0[0]).unwrap();
            assert!(e.states.contains(&ex.s0) && e.states.contains(&ex.s));
        }
    }

    #[test]
    fn uniform_output_gives_ln2() {
        let r = Matrix::from_vec(4, 1, vec![0.5; 4]);
        let (loss, _) = bce_loss(&r, &[1.0, 0.0, 1.0, 0.0]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let (tiny, _) = bce_loss(&Matrix::from_vec(2, 1, vec![1.0, 0.0]), &[1.0, 0.0]);
        assert!(tiny < 2e-7);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let cfg = RewardTrainConfig::default();
        let net = Mlp::new(cfg.net_spec(), 5).unwrap();
        let mut r = rng();
        let x = Matrix::from_vec(4, INPUT_DIM, (0..4 * INPUT_DIM).map(|_| r.random_range(-1.0..1.0)).collect());
        let labels = [1.0, 0.0, 0.0, 1.0];
        let check = gradient_check(&net, &x, |out| bce_loss(out, &labels), 1e-5, 7).unwrap();
        assert!(check.max_rel_error < 1e-4, "{}", check.max_rel_error);
    }

    #[test]
    fn untrained_model_is_uniform() {
        let m = RewardModel::untrained(&RewardTrainConfig::default(), 1).unwrap();
        assert_eq!(m.reward(&[0.3; 9], &[0.1; 9], "open drawer"), 0.5);
    }

    #[test]
    fn balanced_accuracy_weights_classes_equally() {
        assert_eq!(balanced_accuracy(&[0.9, 0.9, 0.9, 0.1], &[1.0, 1.0, 1.0, 0.0]), 1.0);
        assert_eq!(balanced_accuracy(&[0.9, 0.9, 0.9, 0.9], &[1.0, 1.0, 1.0, 0.0]), 0.5);
    }
}
