//! Straight-line f64 reference math and small fixtures shared by the
//! integration tests. Nothing here goes through the tape.

#![allow(dead_code)]

use misc_core::model::layers::{Attention, Linear, Norm};
use misc_core::params::ParamStore;
use misc_core::Tensor;
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn random_mat(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor<f64> {
    let rows: Vec<&[f64]> = m.iter().map(|r| r.as_slice()).collect();
    Tensor::from_rows(&rows).unwrap()
}

pub fn from_tensor(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn param_mat(store: &ParamStore<f64>, id: misc_core::ParamId) -> Mat {
    let t = store.value(id);
    if t.shape().len() == 1 {
        vec![t.data().to_vec()]
    } else {
        from_tensor(t)
    }
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let inner = b.len();
    let cols = b[0].len();
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner);
            (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect()
        })
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn add_bias(a: &Mat, bias: &[f64]) -> Mat {
    a.iter().map(|r| r.iter().zip(bias).map(|(x, b)| x + b).collect()).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn softmax_rows(a: &Mat) -> Mat {
    a.iter().map(|r| softmax(r)).collect()
}

pub fn layer_norm(a: &Mat, gain: &[f64], bias: &[f64]) -> Mat {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + 1e-5).sqrt();
            r.iter().enumerate().map(|(j, x)| (x - mean) / sd * gain[j] + bias[j]).collect()
        })
        .collect()
}

pub fn norm_ref(store: &ParamStore<f64>, norm: &Norm, x: &Mat) -> Mat {
    layer_norm(x, store.value(norm.gain).data(), store.value(norm.bias).data())
}

pub fn linear_ref(store: &ParamStore<f64>, lin: &Linear, x: &Mat) -> Mat {
    add_bias(&matmul(x, &param_mat(store, lin.weight)), store.value(lin.bias).data())
}

pub fn cols(a: &Mat, start: usize, len: usize) -> Mat {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

/// Unmasked multi-head attention of `queries` over `memory`.
pub fn attention_ref(store: &ParamStore<f64>, att: &Attention, queries: &Mat, memory: &Mat) -> Mat {
    let q = linear_ref(store, &att.query, queries);
    let k = linear_ref(store, &att.key, memory);
    let v = linear_ref(store, &att.value, memory);
    let d = q[0].len();
    let dh = d / att.heads;
    let mut joined: Mat = vec![Vec::with_capacity(d); q.len()];
    for h in 0..att.heads {
        let (qh, kh, vh) = (cols(&q, h * dh, dh), cols(&k, h * dh, dh), cols(&v, h * dh, dh));
        let scores: Mat = matmul(&qh, &transpose(&kh))
            .into_iter()
            .map(|r| r.into_iter().map(|s| s / (dh as f64).sqrt()).collect())
            .collect();
        let out = matmul(&softmax_rows(&scores), &vh);
        for (row, o) in joined.iter_mut().zip(out) {
            row.extend(o);
        }
    }
    linear_ref(store, &att.output, &joined)
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

use misc_core::commonsense::SyntheticProvider;
use misc_core::corpus::{dialogue_examples, synthetic_dialogues, Chunking, Example};
use misc_core::model::encoder::EncoderConfig;
use misc_core::model::{EncodedExample, ModelConfig, SupportModel};
use misc_core::vocab::Vocabulary;
use misc_core::Scalar;

/// Examples, vocabulary and a synthetic block provider over `n` synthetic
/// dialogues.
pub fn synthetic_fixture(n: usize, seed: u64, tails: usize) -> (Vec<Example>, Vocabulary, SyntheticProvider) {
    let dialogues = synthetic_dialogues(n, seed);
    let examples: Vec<Example> = dialogues
        .iter()
        .enumerate()
        .flat_map(|(i, d)| dialogue_examples(d, i, 10, Chunking::Disjoint).0)
        .collect();
    let texts: Vec<&str> = dialogues
        .iter()
        .flat_map(|d| std::iter::once(d.situation.as_str()).chain(d.utterances.iter().map(|u| u.text.as_str())))
        .collect();
    let vocab = Vocabulary::build(texts, 1);
    let provider = SyntheticProvider::new(seed, &vocab, tails);
    (examples, vocab, provider)
}

/// A d=16 single-layer configuration sized for fast tests.
pub fn small_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        encoder: EncoderConfig {
            layers: 1,
            heads: 2,
            model_dim: 16,
            ffn_dim: 32,
            max_positions: 96,
            dropout: 0.0,
        },
        decoder_layers: 1,
        max_decoder_positions: 48,
        strategy_hidden: 16,
        ..ModelConfig::default()
    }
}

pub fn encode_all<S: Scalar>(model: &SupportModel<S>, examples: &[Example], vocab: &Vocabulary, provider: &SyntheticProvider) -> Vec<EncodedExample> {
    examples.iter().map(|e| model.encode_example(vocab, provider, e).unwrap()).collect()
}

use misc_core::gradcheck::spread_parameters;
use misc_core::model::decoder::{multi_factor_cross_attention, DecoderLayer, Factor, FactorSet};
use misc_core::model::encoder::refine_blocks;
use misc_core::model::layers::Pass;
use misc_core::model::strategy_head::{mix, one_hot_select, StrategyMode};
use misc_core::rng;
use misc_core::Tape;

/// `H = LN(Ĥ + softmax(Ĥ·Cᵀ)·C)` and the attention weights.
pub fn refine_ref(store: &ParamStore<f64>, norm: &Norm, raw: &Mat, context: &Mat) -> (Mat, Mat) {
    let weights = softmax_rows(&matmul(raw, &transpose(context)));
    let z = matmul(&weights, context);
    (norm_ref(store, norm, &add(raw, &z)), weights)
}

/// Largest deviation of block refinement from [`refine_ref`] over random instances.
pub fn refinement_deviation(instances: usize, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let d = 2 * r.gen_range(1..=8);
        let (n, l) = (r.gen_range(1..=9), r.gen_range(1..=12));
        let mut store = ParamStore::<f64>::new();
        let norm = Norm::new(&mut store, "norm", d, &mut r);
        spread_parameters(&mut store, 1.0, 0.5, &mut r);
        let raw = random_mat(&mut r, n, d, 2.0);
        let ctx = random_mat(&mut r, l, d, 2.0);

        let mut tape = Tape::new();
        let (h, c) = (tape.leaf(to_tensor(&raw)), tape.leaf(to_tensor(&ctx)));
        let out = refine_blocks(&mut tape, &store, &norm, h, c).unwrap();
        let (want, want_w) = refine_ref(&store, &norm, &raw, &ctx);
        worst = worst
            .max(max_abs_diff(&from_tensor(tape.value(out.refined)), &want))
            .max(max_abs_diff(&from_tensor(tape.value(out.weights)), &want_w));
    }
    worst
}

/// Largest deviation of `h^g = p·T` from an explicit weighted row sum.
pub fn mixing_deviation(instances: usize, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let d = r.gen_range(1..=24);
        let t = random_mat(&mut r, 8, d, 1.0);
        let raw: Vec<f64> = (0..8).map(|_| r.gen_range(0.0..1.0)).collect();
        let z: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / z).collect();

        let mut tape = Tape::new();
        let pv = tape.leaf(to_tensor(&vec![p.clone()]));
        let tv = tape.leaf(to_tensor(&t));
        let hg = mix(&mut tape, pv, tv).unwrap();
        let want: Vec<f64> = (0..d).map(|j| (0..8).map(|k| p[k] * t[k][j]).sum()).collect();
        worst = worst.max(max_abs_diff(&from_tensor(tape.value(hg)), &vec![want]));
    }
    worst
}

/// Largest deviation of multi-factor fusion `LN(Σ A^f + O)` from per-factor
/// reference attention, with random subsets of the factors present.
pub fn fusion_deviation(instances: usize, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let heads = r.gen_range(1..=3);
        let d = heads * r.gen_range(1..=5) * 2;
        let t = r.gen_range(1..=6);
        let mut store = ParamStore::<f64>::new();
        let layer = DecoderLayer::new(&mut store, 0, d, heads, 2 * d, false, &mut r);
        spread_parameters(&mut store, 10.0, 0.3, &mut r);
        let o = random_mat(&mut r, t, d, 1.5);
        // Context always present; the others drop out at random.
        let memories: Vec<Option<Mat>> = Factor::ALL
            .iter()
            .map(|&f| {
                let rows = match f {
                    Factor::Context => r.gen_range(1..=8),
                    Factor::Strategy => 1,
                    _ => r.gen_range(1..=6),
                };
                (f == Factor::Context || i % 4 == 0 || r.gen_bool(0.6)).then(|| random_mat(&mut r, rows, d, 1.5))
            })
            .collect();

        let mut tape = Tape::new();
        let ov = tape.leaf(to_tensor(&o));
        let vars: Vec<_> = memories.iter().map(|m| m.as_ref().map(|m| tape.leaf(to_tensor(m)))).collect();
        let factors = FactorSet {
            context: vars[0],
            situation: vars[1],
            post: vars[2],
            strategy: vars[3],
        };
        let got = multi_factor_cross_attention(&mut tape, &store, &layer, ov, &factors).unwrap();

        let mut sum = o.clone();
        for (f, m) in Factor::ALL.iter().zip(&memories) {
            match (m, got.outputs[*f as usize]) {
                (Some(m), Some(out)) => {
                    let a = attention_ref(&store, layer.attention_for(*f), &o, m);
                    worst = worst.max(max_abs_diff(&from_tensor(tape.value(out)), &a));
                    sum = add(&sum, &a);
                }
                (None, None) => {}
                _ => return f64::INFINITY,
            }
        }
        let want = norm_ref(&store, &layer.fusion_norm, &sum);
        worst = worst.max(max_abs_diff(&from_tensor(tape.value(got.fused)), &want));
    }
    worst
}

fn bits(x: &[f32]) -> Vec<u32> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Whether the Single strategy variant reproduces, bit for bit, the mixture
/// path fed a one-hot of the argmax, on one synthetic example.
pub fn sharp_limit_holds(seed: u64, which: usize) -> bool {
    let (examples, vocab, provider) = synthetic_fixture(2, seed, 1);
    let mut mixture = SupportModel::<f32>::new(small_config(vocab.len()), seed).unwrap();
    spread_parameters(&mut mixture.params, 10.0, 0.1, &mut rng::seeded(seed));
    let mut single = mixture.clone();
    single.config.strategy_mode = StrategyMode::Single;
    let encoded = encode_all(&mixture, &examples, &vocab, &provider);
    let ex = &encoded[which % encoded.len()];
    let prefix = ex.decoder_input();

    let mut tape = Tape::new();
    let s_side = single.encode_side(&mut tape, &single.params, ex, None, &mut Pass::eval()).unwrap();
    let s_out = single.decoder.forward(&mut tape, &single.params, &single.embeddings, &prefix, &s_side.factors, &mut Pass::eval()).unwrap();

    let m_side = mixture.encode_side(&mut tape, &mixture.params, ex, None, &mut Pass::eval()).unwrap();
    let one_hot = one_hot_select(tape.value(m_side.strategy_probs).data());
    let p = tape.leaf(misc_core::Tensor::new(vec![1, 8], one_hot).unwrap());
    let hg = mixture.strategy.mix(&mut tape, &mixture.params, p).unwrap();
    let factors = FactorSet { strategy: Some(hg), ..m_side.factors };
    let m_out = mixture.decoder.forward(&mut tape, &mixture.params, &mixture.embeddings, &prefix, &factors, &mut Pass::eval()).unwrap();

    bits(tape.value(s_side.strategy_vector.unwrap()).data()) == bits(tape.value(hg).data())
        && bits(tape.value(s_out.logits).data()) == bits(tape.value(m_out.logits).data())
}
