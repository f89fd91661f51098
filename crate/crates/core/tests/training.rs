//! Optimizer descent, the training loop and checkpoint round trips.

mod common;

use common::*;
use misc_core::checkpoint::Checkpoint;
use misc_core::optim::{AdamW, AdamWConfig};
use misc_core::params::ParamStore;
use misc_core::train::{evaluate_split, train, Control, TrainConfig};
use misc_core::model::SupportModel;
use misc_core::{Tape, Tensor};

#[test]
fn adamw_descends_a_quadratic() {
    let mut store = ParamStore::<f64>::new();
    let x = store.insert("x", Tensor::vector(vec![3.0, -2.0, 0.5]), true);
    let target = [1.0, 1.0, -1.0];
    let loss = |s: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let v = tape.param(s, x);
        let t = tape.leaf(Tensor::vector(target.to_vec()));
        let neg = tape.scale(t, -1.0);
        let d = tape.add(v, neg).unwrap();
        let sq = tape.mul(d, d).unwrap();
        let l = tape.sum(sq);
        let g = tape.backward(l, s).unwrap();
        (tape.value(l).data()[0], g)
    };
    let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() }, &store);
    let (start, _) = loss(&store);
    let mut prev = start;
    for i in 0..400 {
        let (l, g) = loss(&store);
        if i < 20 {
            assert!(l <= prev + 1e-12, "step {i}: {l} > {prev}");
        }
        prev = l;
        opt.step(&mut store, &g, 0.05).unwrap();
    }
    assert!(loss(&store).0 < 1e-3 * start);
}

fn tiny_run(config: &TrainConfig) -> (SupportModel<f32>, Vec<misc_core::model::EncodedExample>, misc_core::train::TrainOutcome<f32>) {
    let (examples, vocab, provider) = synthetic_fixture(2, 5, 1);
    let mut model = SupportModel::<f32>::new(small_config(vocab.len()), 5).unwrap();
    let data = encode_all(&model, &examples, &vocab, &provider);
    let outcome = train(&mut model, &data, &data, config, |_, _, _| Control::Continue).unwrap();
    (model, data, outcome)
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        warmup_steps: 2,
        epochs: 6,
        train_batch: 4,
        eval_batch: 8,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn training_lowers_dev_perplexity_and_keeps_the_best_epoch() {
    let (_, _, out) = tiny_run(&quick_config());
    let first = out.dev_ppl_per_epoch[0];
    let best = out.dev_ppl_per_epoch.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best < first, "{:?}", out.dev_ppl_per_epoch);
    assert_eq!(out.best_dev_ppl, best);
    assert_eq!(out.dev_ppl_per_epoch[out.best_epoch], best);
    assert_eq!(out.log.len(), out.steps);
    assert!(out.log.iter().all(|r| r.loss.l == r.loss.l_r + r.loss.l_g));
}

#[test]
fn training_is_deterministic_per_seed() {
    let (_, _, a) = tiny_run(&quick_config());
    let (_, _, b) = tiny_run(&quick_config());
    assert_eq!(a.log, b.log);
    assert_eq!(a.best, b.best);
    let (_, _, c) = tiny_run(&TrainConfig { seed: 12, ..quick_config() });
    assert_ne!(a.log, c.log);
}

#[test]
fn step_cap_and_early_stop() {
    let (_, _, out) = tiny_run(&TrainConfig { max_steps: Some(3), ..quick_config() });
    assert_eq!(out.steps, 3);
    assert!(out.log.last().unwrap().dev_ppl.is_some());

    let (examples, vocab, provider) = synthetic_fixture(2, 5, 1);
    let mut model = SupportModel::<f32>::new(small_config(vocab.len()), 5).unwrap();
    let data = encode_all(&model, &examples, &vocab, &provider);
    let out = train(&mut model, &data, &data, &quick_config(), |row, _, _| {
        if row.step == 2 {
            Control::Stop
        } else {
            Control::Continue
        }
    })
    .unwrap();
    assert_eq!(out.steps, 2);
    assert!(out.log[1].dev_ppl.is_some());
}

#[test]
fn checkpoint_round_trip_preserves_dev_perplexity_bits() {
    let (model, data, out) = tiny_run(&quick_config());
    let bytes = Checkpoint::new(out.best.clone()).with_meta("note", "x").encode();
    let back = Checkpoint::<f32>::decode(&bytes).unwrap();
    assert_eq!(back.params, out.best);
    assert_eq!(back.meta("note"), Some("x"));
    let before = evaluate_split(&model, &out.best, &data, 8).unwrap().perplexity();
    let after = evaluate_split(&model, &back.params, &data, 8).unwrap().perplexity();
    assert_eq!(before.to_bits(), after.to_bits());
    assert_eq!(before.to_bits(), out.best_dev_ppl.to_bits());
}
