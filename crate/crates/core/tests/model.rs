//! Structural properties of the encoder, the rank machinery and the heads.

use fdp::config::RunConfig;
use fdp::data::synth::generate;
use fdp::data::SynthSpec;
use fdp::encoder::{FrameEncoder, GlobalAggregator, LocalAggregator, MultiHeadSelfAttention};
use fdp::heads::{dic_loss, full_loss, LossWeights, Prediction};
use fdp::numerics::{Graph, Mode, ParamStore, Tensor};
use fdp::rank::{rank_loss, RankTarget, TemporalPool};
use fdp::train::{train, Dataset};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng(seed))
}

#[test]
fn aggregators_with_zero_weights_are_the_identity() {
    let cfg = RunConfig::tiny().model(3).encoder;
    let mut store = ParamStore::<f64>::new();
    let local = LocalAggregator::new(&mut store, "local", 8, &cfg, &mut rng(1)).unwrap();
    let global = GlobalAggregator::new(&mut store, "global", 8, &cfg, &mut rng(2)).unwrap();
    // Every weight and bias zero; BN scales stay at one.
    store.zero_trainable_except(&[".gamma"]);
    for mode in [Mode::Eval, Mode::Train] {
        let mut g = Graph::new(mode);
        let x = g.input(randn(&[2, 8, 4, 4], 3));
        let a = local.forward(&mut g, &store, x).unwrap();
        let b = global.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(a).data(), g.value(x).data());
        assert_eq!(g.value(b).data(), g.value(x).data());
    }
}

#[test]
fn attention_rows_sum_to_one_for_every_head_and_token() {
    let mut store = ParamStore::<f32>::new();
    let attn = MultiHeadSelfAttention::new(&mut store, "attn", 8, 4, 0.0, &mut rng(4)).unwrap();
    let mut g = Graph::new(Mode::Eval);
    let x = g.input(randn(&[3, 8, 3, 5], 5).map(|v| 4.0 * v).cast());
    let (_, weights) = attn.forward_with_weights(&mut g, &store, x).unwrap();
    assert_eq!(g.shape(weights), &[12, 15, 15]);
    for row in g.value(weights).data().chunks(15) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn feature_width_does_not_depend_on_batch_size() {
    let cfg = RunConfig::tiny().model(3).encoder;
    let mut store = ParamStore::<f32>::new();
    let enc = FrameEncoder::new(&mut store, cfg.clone(), &mut rng(6)).unwrap();
    let s = cfg.input_size;
    let mut widths = Vec::new();
    for n in [1, 2, 5] {
        let mut g = Graph::new(Mode::Eval);
        let x = g.input(randn(&[n, 3, s, s], n as u64).cast());
        let f = enc.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(f)[0], n);
        widths.push(g.shape(f)[1]);
    }
    assert!(widths.iter().all(|&w| w == enc.feature_width()));
}

#[test]
fn temporal_pool_is_linear() {
    let mut store = ParamStore::<f64>::new();
    let pool = TemporalPool::new(&mut store, 32, 4, 3, &mut rng(7)).unwrap();
    let (a, b) = (randn(&[8, 32], 8), randn(&[8, 32], 9));
    let (alpha, beta) = (0.7, -1.3);
    let combo = a.zip_map(&b, |x, y| alpha * x + beta * y).unwrap();
    let run = |t: Tensor<f64>| {
        let mut g = Graph::new(Mode::Eval);
        let v = g.input(t);
        let y = pool.forward(&mut g, &store, v).unwrap();
        g.value(y).clone()
    };
    let (ya, yb, yc) = (run(a), run(b), run(combo));
    assert_eq!(ya.shape(), &[2, 3, 4, 8]);
    let want = ya.zip_map(&yb, |x, y| alpha * x + beta * y).unwrap();
    assert!(yc.max_abs_diff(&want).unwrap() < 1e-5);
}

proptest! {
    #[test]
    fn rank_loss_is_nonnegative_and_zero_only_on_the_ramp(
        scores in prop::collection::vec(-5.0f64..5.0, 1..10),
        slope in 0.1f64..3.0,
    ) {
        let target = RankTarget::new(slope).unwrap();
        let l = rank_loss(&scores, target).unwrap();
        prop_assert!(l >= 0.0);
        let on_ramp = scores.iter().enumerate().all(|(k, &s)| s == target.at(k));
        prop_assert_eq!(l == 0.0, on_ramp);
        let ramp: Vec<f64> = (0..scores.len()).map(|k| target.at(k)).collect();
        prop_assert_eq!(rank_loss(&ramp, target).unwrap(), 0.0);
    }

    #[test]
    fn dic_loss_is_symmetric_and_vanishes_only_on_equality(
        a in prop::collection::vec(0.0f64..1.0, 1..20),
        shift in prop::collection::vec(-0.5f64..0.5, 20),
    ) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        prop_assert_eq!(dic_loss(&a, &b).unwrap(), dic_loss(&b, &a).unwrap());
        prop_assert_eq!(dic_loss(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(dic_loss(&a, &b).unwrap() == 0.0, a == b);
    }

    #[test]
    fn full_loss_is_monotone_in_each_component(
        parts in prop::array::uniform3(0.0f64..10.0),
        bump in 0.0f64..5.0,
        wd in 0.0f64..200.0,
        wr in 0.0f64..2.0,
    ) {
        let w = LossWeights::new(wd, wr).unwrap();
        let base = full_loss(parts[0], parts[1], parts[2], w);
        for i in 0..3 {
            let mut p = parts;
            p[i] += bump;
            prop_assert!(full_loss(p[0], p[1], p[2], w) >= base);
        }
    }

    #[test]
    fn predicted_class_ignores_a_shared_logit_shift(
        logits in prop::collection::vec(-6.0f64..6.0, 2..7),
        shift in -20.0f64..20.0,
    ) {
        let softmax = |z: &[f64]| {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let a = Prediction::from_probs(softmax(&logits)).unwrap();
        let b = Prediction::from_probs(softmax(&shifted)).unwrap();
        prop_assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert_eq!(a.class, b.class);
    }
}

#[test]
fn without_auxiliary_weights_the_total_is_the_recognition_loss() {
    let spec = SynthSpec {
        num_subjects: 1,
        clips_per_cell: 1,
        frames_per_clip: 8,
        ..SynthSpec::default()
    };
    let data = Dataset::new(generate(&spec).unwrap(), spec.num_classes).unwrap();
    let mut config = RunConfig::tiny();
    config.epochs = 2;
    config.lambda_d = 0.0;
    config.lambda_r = 0.0;
    let trained = train(&config, &data, |_| {}).unwrap();
    for h in &trained.history {
        assert_eq!(h.loss, h.mer, "{h}");
    }
}
