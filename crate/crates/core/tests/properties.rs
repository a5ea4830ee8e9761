use std::collections::HashMap;

use lorel_core::data::{self, annotate_episode, filter_dataset, Dataset, Episode, DO_NOTHING};
use lorel_core::dynamics::{rollout, GroundTruth};
use lorel_core::lang::{cosine, perturb, Encoder, EncoderMode, EMBED_DIM};
use lorel_core::nn::{AdamState, Mlp, MlpSpec, Activation, Params};
use lorel_core::planner::{CemDistribution, PlanConfig, Planner};
use lorel_core::reward::{build_batch, flipped_negative, sample_positive, RewardTrainConfig};
use lorel_core::sim::{
    reset, step, success, success_any, Action, SceneState, TaskId, ACTION_LIMIT, MUG_RADIUS, STATE_DIM,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn small_corpus() -> &'static Dataset {
    use std::sync::OnceLock;
    static D: OnceLock<Dataset> = OnceLock::new();
    D.get_or_init(|| data::collect(400, 20, 31))
}

#[test]
fn ten_thousand_rollouts_stay_legal() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for ep in 0..10_000u64 {
        let mut s = reset(ep);
        for _ in 0..20 {
            // Out-of-range commands exercise clipping.
            let a = Action::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
            let next = step(&s, a);
            assert!(next.is_valid(), "episode {ep}: {next:?}");
            assert!(dist(next.ee, s.ee) <= ACTION_LIMIT * 2f64.sqrt() + 1e-12);
            assert!(dist(next.black_mug, next.white_mug) >= 2.0 * MUG_RADIUS - 1e-9);
            s = next;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reset_is_legal_and_pure(seed in any::<u64>()) {
        let s = reset(seed);
        prop_assert!(s.is_valid());
        prop_assert_eq!(s, reset(seed));
        prop_assert_eq!(SceneState::from_vector(&s.to_vector()), s);
    }

    #[test]
    fn step_is_pure_and_clips(seed in any::<u64>(), dx in -1.0f64..1.0, dy in -1.0f64..1.0) {
        let s = reset(seed);
        let a = Action::new(dx, dy);
        let next = step(&s, a);
        prop_assert_eq!(next, step(&s, a));
        prop_assert_eq!(next, step(&s, a.clipped()));
        prop_assert!(next.is_valid());
    }

    #[test]
    fn nothing_succeeds_without_moving(seed in any::<u64>()) {
        let s = reset(seed);
        for t in TaskId::ALL {
            prop_assert!(!success(&t.spec(), &s, &s));
            prop_assert!(!success_any(&t.spec(), &[s, s, s]));
        }
    }

    #[test]
    fn rollout_matches_stepping(seed in any::<u64>(), n in 0usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actions: Vec<[f64; 2]> = (0..n).map(|_| lorel_core::sim::random_action(&mut rng).delta).collect();
        let states = rollout(&GroundTruth, &reset(seed).to_vector(), &actions);
        prop_assert_eq!(states.len(), n + 1);
        let mut s = reset(seed);
        for (a, v) in actions.iter().zip(&states[1..]) {
            s = step(&s, Action { delta: *a });
            prop_assert_eq!(&s.to_vector(), v);
        }
    }

    #[test]
    fn tokens_are_unit_and_sentences_average_them(words in proptest::collection::vec("[a-z]{1,8}", 1..6)) {
        let sentence = words.join(" ");
        for mode in [EncoderMode::Lexicon, EncoderMode::HashOnly] {
            let enc = Encoder::bundled(mode);
            let e = enc.encode(&sentence);
            prop_assert_eq!(e, enc.encode(&sentence));
            let mut mean = [0.0; EMBED_DIM];
            for w in &words {
                let t = enc.embed_token(w);
                let n = t.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() < 1e-9, "{} has norm {}", w, n);
                prop_assert!((cosine(&t, &t) - 1.0).abs() < 1e-9);
                mean.iter_mut().zip(t).for_each(|(m, v)| *m += v / words.len() as f64);
            }
            prop_assert!(e.iter().zip(&mean).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn perturbation_stays_in_box(seed in any::<u64>(), scale in 0.0f64..0.5) {
        let e = Encoder::bundled(EncoderMode::Lexicon).encode("open the drawer");
        let p = perturb(&e, &mut ChaCha8Rng::seed_from_u64(seed), scale);
        prop_assert_eq!(p.len(), EMBED_DIM);
        prop_assert!(e.iter().zip(&p).all(|(a, b)| (a - b).abs() <= scale));
    }

    #[test]
    fn positives_respect_the_window(seed in any::<u64>(), alpha in 0.0f64..0.5) {
        let d = small_corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ex = sample_positive(d, alpha, &mut rng);
        let t = d.horizon;
        let ep = d.episodes.iter().find(|e| e.instruction == ex.instruction && e.states.contains(&ex.s0) && e.states.contains(&ex.s)).unwrap();
        let i = ep.states.iter().position(|s| *s == ex.s0).unwrap();
        let j = ep.states.iter().rposition(|s| *s == ex.s).unwrap();
        prop_assert!(i <= (alpha * t as f64).floor() as usize);
        prop_assert!(j >= ((1.0 - alpha) * t as f64).ceil() as usize);
        prop_assert!(i < j);
        let flipped = flipped_negative(&ex);
        prop_assert_eq!(flipped.label, 0.0);
        let back = flipped_negative(&flipped);
        prop_assert_eq!((back.s0, back.s, back.instruction), (ex.s0, ex.s, ex.instruction));
    }

    #[test]
    fn batches_are_label_balanced(seed in any::<u64>(), mix in 0usize..3) {
        let (cross, flip) = [(true, true), (true, false), (false, true)][mix];
        let cfg = RewardTrainConfig { use_cross_negatives: cross, use_flipped_negatives: flip, ..Default::default() };
        let d = filter_dataset(small_corpus());
        let batch = build_batch(&d, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(batch.len(), cfg.batch_size);
        let pos = batch.iter().filter(|e| e.label == 1.0).count();
        prop_assert_eq!(pos, cfg.batch_size / 2);
        prop_assert!(batch.iter().all(|e| e.label == 0.0 || e.label == 1.0));
    }

    #[test]
    fn cem_samples_are_in_bounds(seed in any::<u64>(), m in -0.2f64..0.2, sd in 0.0f64..0.3) {
        let mut d = CemDistribution::new(12, sd);
        d.mean.iter_mut().for_each(|x| *x = [m, -m]);
        let seq = d.sample(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(seq.len(), 12);
        prop_assert!(seq.iter().flatten().all(|a| a.abs() <= ACTION_LIMIT));
    }

    #[test]
    fn best_so_far_never_decreases(seed in any::<u64>()) {
        let cfg = PlanConfig { samples: 24, horizon: 8, cem_iters: 4, ..PlanConfig::sim() };
        let reward = |s0: &[f64; STATE_DIM], s: &[f64; STATE_DIM], _: &str| s[2] - s0[2] - (s[0] - 0.4).abs();
        let s = reset(seed).to_vector();
        let r = Planner::new(&GroundTruth, &reward, &cfg).plan(&s, &s, 8, "", &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(r.best_per_iter.len(), 4);
        prop_assert!(r.best_per_iter.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(*r.best_per_iter.last().unwrap(), r.score);
        prop_assert!(r.actions.iter().flatten().all(|a| a.abs() <= ACTION_LIMIT));
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>()) {
        let net = Mlp::new(MlpSpec::relu_net(5, &[7, 3], 2, Activation::Sigmoid, 0.1), seed).unwrap();
        let back = Mlp::from_bytes(&net.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), net.to_bytes());
        prop_assert_eq!(back.predict_one(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap(), net.predict_one(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap());
    }

    #[test]
    fn first_adam_step_moves_each_param_by_lr(seed in any::<u64>(), lr in 1e-5f64..1e-2) {
        // With bias correction the first update is lr * g / (|g| + eps) = lr * sign(g).
        let spec = MlpSpec::relu_net(3, &[4], 2, Activation::Linear, 0.0);
        let net = Mlp::new(spec.clone(), seed).unwrap();
        let mut params = net.params.clone();
        let mut grads = Params::zeros_like(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        grads.values_mut().for_each(|g| *g = rng.random_range(0.5..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 });
        AdamState::new(&spec, lr).step(&mut params, &grads);
        for ((new, old), g) in params.values().zip(net.params.values()).zip(grads.values()) {
            prop_assert!(((old - new) - lr * g.signum()).abs() < lr * 1e-6);
        }
    }
}

#[test]
fn corpus_replays_and_is_annotated_soundly() {
    let d = small_corpus();
    assert_eq!(d.len(), 400);
    for e in &d.episodes {
        assert!(e.replays_exactly());
        assert_eq!(e.instruction, annotate_episode(e));
        let (s0, s1) = (SceneState::from_vector(e.first()), SceneState::from_vector(e.last()));
        let ins = e.instruction.as_str();
        let dd = s1.drawer_ext - s0.drawer_ext;
        assert_eq!(ins.contains("open drawer"), dd > 0.01, "{ins}");
        assert_eq!(ins.contains("close drawer"), dd < -0.01, "{ins}");
        let df = s1.faucet_angle - s0.faucet_angle;
        assert_eq!(ins.contains("faucet left"), df > std::f64::consts::PI / 20.0, "{ins}");
        assert_eq!(ins.contains("faucet right"), df < -std::f64::consts::PI / 20.0, "{ins}");
        assert_eq!(ins.contains("black mug"), dist(s0.black_mug, s1.black_mug) > 0.01, "{ins}");
        assert_eq!(ins.contains("white mug"), dist(s0.white_mug, s1.white_mug) > 0.01, "{ins}");
        let moved = dd.abs() > 0.01
            || df.abs() > std::f64::consts::PI / 20.0
            || dist(s0.black_mug, s1.black_mug) > 0.01
            || dist(s0.white_mug, s1.white_mug) > 0.01;
        assert_eq!(ins == DO_NOTHING, !moved, "{ins}");
    }
}

#[test]
fn filtering_keeps_order_and_drops_only_do_nothing() {
    let d = small_corpus();
    let f = filter_dataset(d);
    let expect: Vec<&Episode> = d.episodes.iter().filter(|e| e.instruction != DO_NOTHING).collect();
    assert_eq!(f.episodes.iter().collect::<Vec<_>>(), expect);
    assert!(f.episodes.iter().all(|e| e.instruction != DO_NOTHING));
}

#[test]
fn desk_corpus_shape() {
    // Survival rate and instruction variety on a 2000-episode corpus.
    let d = data::collect(2000, 20, 7);
    let f = filter_dataset(&d);
    let survival = f.len() as f64 / d.len() as f64;
    assert!((0.75..=0.85).contains(&survival), "survival {survival}");
    assert!(f.unique_instructions().len() >= 100, "{}", f.unique_instructions().len());
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in &f.episodes {
        *counts.entry(e.instruction.as_str()).or_default() += 1;
    }
    assert!(counts.values().all(|&c| c < f.len() / 2));
}

#[test]
fn jsonl_round_trip_and_hash() {
    let d = data::collect(30, 20, 2);
    let bytes = d.to_jsonl().unwrap();
    let back = Dataset::from_jsonl(&bytes).unwrap();
    assert_eq!(back, d);
    assert_eq!(back.content_hash().unwrap(), d.content_hash().unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    d.save(&path).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), d);
    assert_eq!(data::collect(30, 20, 2).to_jsonl().unwrap(), bytes);
    assert_ne!(data::collect(30, 20, 3).to_jsonl().unwrap(), bytes);
}
