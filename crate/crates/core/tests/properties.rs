//! Cross-module properties of the model, frontend, corpus and trainer.

use mdlas_core::data::{PaddedBatch, Utterance};
use mdlas_core::decode::{beam_decode, greedy_decode, LasStepper};
use mdlas_core::dialect::{DialectInventory, OutputToken, SystemTag};
use mdlas_core::eval::Sequential;
use mdlas_core::frontend::stack_and_downsample;
use mdlas_core::layers::LstmParams;
use mdlas_core::model::{count_parameters, DialectFeed, LasModel, ModelConfig};
use mdlas_core::synth::{generate_corpus, graphemes, SplitSizes, SyntheticSpec};
use mdlas_core::train::{sgd_update, train, TrainConfig};
use mdlas_core::{Precision, Tensor};
use proptest::prelude::*;

fn inventory() -> DialectInventory {
    DialectInventory::new(&["en-us", "en-gb", "en-au"]).unwrap()
}

fn tiny(system: SystemTag, seed: u64) -> LasModel {
    let cfg = ModelConfig::for_system(32, &graphemes(), inventory(), system)
        .unwrap()
        .with_sizes(&[8], &[8], 8, 4)
        .unwrap();
    LasModel::new(cfg, seed).unwrap()
}

fn small_corpus(seed: u64, n: usize) -> mdlas_core::data::Corpus {
    let mut spec = SyntheticSpec::default_with_seed(seed);
    for s in &mut spec.utterances_per_dialect {
        *s = SplitSizes { train: n, dev: n, test: n };
    }
    generate_corpus(&spec).unwrap()
}

/// Teacher-forced argmax predictions and the per-step probability sums.
fn teacher_forced(model: &LasModel, u: &Utterance) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let targets = model.targets(&u.transcript, u.dialect).unwrap();
    let mut g = model.inference_graph();
    let bound = model.bind(&mut g);
    let x = g.input(u.model_input().unwrap());
    let enc = model.encode(&mut g, &bound, x, Some(u.dialect), None).unwrap();
    let dvec = model.decoder_vector(&mut g, &bound, Some(u.dialect)).unwrap();
    let mut state = model.initial_state(&mut g);
    let (mut pred, mut sums) = (Vec::new(), Vec::new());
    for &prev in &targets[..targets.len() - 1] {
        let out = model.decode_step(&mut g, &bound, &enc, dvec, prev, &state).unwrap();
        let p = g.softmax(out.logits, None).unwrap();
        let probs = g.value(p);
        sums.push(probs.iter().sum());
        let best = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        pred.push(best);
        state = out.state;
    }
    (pred, targets[1..].to_vec(), sums)
}

#[test]
fn lstm_layer_count_closed_form() {
    assert_eq!(LstmParams::num_params(2, 3), 72);
}

#[test]
fn deeper_encoders_have_more_parameters() {
    let base = ModelConfig::for_system(32, &graphemes(), inventory(), SystemTag::S7).unwrap();
    let one = base.clone().with_sizes(&[16], &[16], 16, 8).unwrap();
    let two = base.with_sizes(&[16, 16], &[16], 16, 8).unwrap();
    assert!(count_parameters(&two) > count_parameters(&one));
}

#[test]
fn step_distributions_sum_to_one() {
    let c = small_corpus(2, 2);
    for tag in [SystemTag::S1, SystemTag::S4, SystemTag::S7, SystemTag::S8 { embedding: true }] {
        let m = tiny(tag, 3);
        for u in &c.train {
            let (_, _, sums) = teacher_forced(&m, u);
            assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-12), "{sums:?}");
        }
    }
}

#[test]
fn logits_cover_dialect_tokens_for_token_systems() {
    for (tag, extra) in [(SystemTag::S1, 0), (SystemTag::S3, 3), (SystemTag::S4, 3), (SystemTag::S9, 3)] {
        let m = tiny(tag, 1);
        let mut g = m.inference_graph();
        let bound = m.bind(&mut g);
        let x = g.input(Tensor::matrix(2, 32, vec![0.1; 64]).unwrap());
        let enc = m.encode(&mut g, &bound, x, Some(0), None).unwrap();
        let dvec = m.decoder_vector(&mut g, &bound, Some(0)).unwrap();
        let state = m.initial_state(&mut g);
        let out = m.decode_step(&mut g, &bound, &enc, dvec, m.vocab().sos(), &state).unwrap();
        // 27 graphemes plus <sos> and <eos>
        assert_eq!(g.shape(out.logits), &[29 + extra]);
    }
}

#[test]
fn target_step_counts() {
    let s1 = tiny(SystemTag::S1, 0);
    assert_eq!(s1.targets("a", 0).unwrap().len() - 1, 2);
    let s4 = tiny(SystemTag::S4, 0);
    assert_eq!(s4.targets("a", 0).unwrap().len() - 1, 3);
}

#[test]
fn untrained_loss_is_near_uniform() {
    let c = small_corpus(4, 3);
    let m = tiny(SystemTag::S1, 9);
    let v = m.vocab().len() as f64;
    for u in &c.train {
        let mut g = m.inference_graph();
        let bound = m.bind(&mut g);
        let x = g.input(u.model_input().unwrap());
        let t = m.targets(&u.transcript, u.dialect).unwrap();
        let loss = m.utterance_loss(&mut g, &bound, x, None, &t, u.dialect).unwrap();
        let l = g.value(loss)[0];
        assert!((l - v.ln()).abs() < 0.1 * v.ln(), "loss {l} vs ln V {}", v.ln());
    }
}

#[test]
fn batch_loss_is_order_independent() {
    let c = small_corpus(5, 2);
    let m = tiny(SystemTag::S7, 2);
    let inputs: Vec<Tensor> = c.train.iter().map(|u| u.model_input().unwrap()).collect();
    let order: Vec<usize> = (0..c.train.len()).collect();
    let mut reversed = order.clone();
    reversed.reverse();
    let loss = |idx: &[usize]| {
        let b = PaddedBatch::gather(&c.train, &inputs, idx, m.vocab(), OutputToken::None).unwrap();
        let mut g = m.graph();
        let bound = m.bind(&mut g);
        let l = m.batch_loss(&mut g, &bound, &b).unwrap();
        g.value(l)[0]
    };
    assert!((loss(&order) - loss(&reversed)).abs() < 1e-12);
}

#[test]
fn greedy_is_deterministic_and_beam_one_agrees() {
    let c = small_corpus(6, 2);
    let m = tiny(SystemTag::S9, 4);
    for u in &c.test {
        let x = u.model_input().unwrap();
        let run = || greedy_decode(&mut LasStepper::new(&m, &x, DialectFeed::same(u.dialect)).unwrap(), 20).unwrap();
        let a = run();
        assert_eq!(a, run());
        let b = beam_decode(&mut LasStepper::new(&m, &x, DialectFeed::same(u.dialect)).unwrap(), 1, 20).unwrap();
        assert_eq!(b[0], a);
    }
}

#[test]
fn model_rigged_to_end_immediately_emits_nothing() {
    let mut m = tiny(SystemTag::S1, 0);
    let eos = m.vocab().eos();
    let v = m.vocab().len();
    let b = m.params_mut().by_name_mut("output.b").unwrap();
    for (i, x) in b.values_mut().iter_mut().enumerate() {
        *x = if i == eos { 50.0 } else { -50.0 };
    }
    assert_eq!(b.len(), v);
    let w = m.params_mut().by_name_mut("output.w").unwrap();
    w.values_mut().iter_mut().for_each(|x| *x = 0.0);
    let x = Tensor::matrix(3, 32, vec![0.5; 96]).unwrap();
    let h = greedy_decode(&mut LasStepper::new(&m, &x, DialectFeed::same(0)).unwrap(), 10).unwrap();
    assert!(h.tokens.is_empty());
    assert!(!h.truncated);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let c = small_corpus(7, 4);
    let m = tiny(SystemTag::S6 { embedding: true }, 5);
    let before = m.clone();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        batch_size: 2,
        max_steps: Some(6),
        eval_every_n_steps: 3,
        ..Default::default()
    };
    let out = train(m, &c.train, &c.dev, &cfg, &Sequential, &mut |_| {}).unwrap();
    assert_eq!(out.last.model.params(), before.params());
    assert_eq!(out.last.state.step, 6);
}

#[test]
fn sgd_update_examples() {
    let mut p = mdlas_core::params::ParamStore::new();
    p.insert("t", Tensor::vector(vec![1.0])).unwrap();
    let n = sgd_update(&mut p, &[vec![2.0]], 0.5, 10.0, Precision::Float64).unwrap();
    assert_eq!(n, 2.0);
    assert_eq!(p.tensors()[0].values(), &[0.0]);
    // zero gradient
    sgd_update(&mut p, &[vec![0.0]], 0.5, 10.0, Precision::Float64).unwrap();
    assert_eq!(p.tensors()[0].values(), &[0.0]);
}

#[test]
fn one_step_moves_the_used_embedding_row_only() {
    let c = small_corpus(8, 1);
    let m = tiny(SystemTag::S5 { embedding: true }, 6);
    let u = c.train.iter().find(|u| u.dialect == 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.5,
        batch_size: 1,
        max_steps: Some(1),
        eval_every_n_steps: 1,
        ..Default::default()
    };
    let table = |m: &LasModel| m.params().by_name("dialect.embedding").unwrap().clone();
    let before = table(&m);
    let out = train(m, std::slice::from_ref(u), std::slice::from_ref(u), &cfg, &Sequential, &mut |_| {}).unwrap();
    let after = table(&out.last.model);
    let dim = before.cols();
    assert_ne!(before.row(1), after.row(1));
    assert_eq!(before.row(0), after.row(0));
    assert_eq!(before.row(2), after.row(2));
    assert_eq!(dim, after.cols());
}

#[test]
fn single_utterance_overfits_to_full_token_accuracy() {
    let c = small_corpus(9, 1);
    let u = c.train[0].clone();
    let cfg_m = ModelConfig::for_system(32, &graphemes(), inventory(), SystemTag::S1)
        .unwrap()
        .with_sizes(&[16], &[16], 16, 8)
        .unwrap();
    let m = LasModel::new(cfg_m, 1).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.5,
        lr_decay: 1.0,
        batch_size: 1,
        max_epochs: 1000,
        max_steps: Some(200),
        eval_every_n_steps: 200,
        ..Default::default()
    };
    let out = train(m, std::slice::from_ref(&u), std::slice::from_ref(&u), &cfg, &Sequential, &mut |_| {}).unwrap();
    let (pred, gold, _) = teacher_forced(&out.last.model, &u);
    assert_eq!(pred, gold, "transcript {:?}", u.transcript);
}

#[test]
fn stacking_lengths_for_short_inputs() {
    for t in 1..=20 {
        for d in [1, 3, 8] {
            let x = Tensor::matrix(t, d, (0..t * d).map(|v| v as f64).collect()).unwrap();
            let y = stack_and_downsample(&x).unwrap();
            assert_eq!(y.shape(), &[t.div_ceil(3), 4 * d], "T={t} D={d}");
        }
    }
}

#[test]
fn paper_frontend_shapes() {
    let x = Tensor::matrix(9, 80, vec![0.25; 720]).unwrap();
    assert_eq!(stack_and_downsample(&x).unwrap().shape(), &[3, 320]);
    let x = Tensor::matrix(1, 80, (0..80).map(f64::from).collect()).unwrap();
    let y = stack_and_downsample(&x).unwrap();
    assert_eq!(y.shape(), &[1, 320]);
    for k in 0..4 {
        assert_eq!(&y.values()[80 * k..80 * (k + 1)], x.values());
    }
}

#[test]
fn default_corpus_counts_match_the_spec() {
    let spec = SyntheticSpec::default_with_seed(11);
    let c = generate_corpus(&spec).unwrap();
    for (d, sizes) in spec.utterances_per_dialect.iter().enumerate() {
        let n = |utts: &[Utterance]| utts.iter().filter(|u| u.dialect == d).count();
        assert_eq!(n(&c.train), sizes.train);
        assert_eq!(n(&c.dev), sizes.dev);
        assert_eq!(n(&c.test), sizes.test);
    }
    assert_eq!(c.train.len(), 4500);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn unconditioned_outputs_ignore_the_dialect(seed in 0u64..500, t in 1usize..6) {
        let m = tiny(SystemTag::S1, seed);
        let x = Tensor::matrix(t, 32, (0..t * 32).map(|i| ((i as f64) * 0.37).sin()).collect()).unwrap();
        let a = greedy_decode(&mut LasStepper::new(&m, &x, DialectFeed::same(0)).unwrap(), 8).unwrap();
        let b = greedy_decode(&mut LasStepper::new(&m, &x, DialectFeed::same(2)).unwrap(), 8).unwrap();
        prop_assert_eq!(a, b);
    }
}
