//! Fixtures shared by the command-line tests: the overfit harness, binary
//! invocation and file comparison.

#![allow(dead_code)]

#[path = "../../../core/tests/common/mod.rs"]
pub mod reference;

use std::path::Path;
use std::process::{Command, Output};

use misc_core::model::{EncodedExample, ModelConfig, SupportModel};
use misc_core::params::ParamStore;
use misc_core::rng;
use misc_core::sampling::GenerationConfig;
use misc_core::train::TrainConfig;
use misc_core::vocab::Vocabulary;

pub const HARNESS_SEED: u64 = 7;
pub const HARNESS_DIALOGUES: usize = 16;

/// The 16-example synthetic corpus with two synthetic tails per relation,
/// encoded for a d=64 model.
pub fn overfit_harness() -> (SupportModel<f32>, Vec<EncodedExample>, Vocabulary) {
    let (examples, vocab, provider) = reference::synthetic_fixture(HARNESS_DIALOGUES, HARNESS_SEED, 2);
    let config = ModelConfig {
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    let model = SupportModel::<f32>::new(config, HARNESS_SEED).unwrap();
    let data = reference::encode_all(&model, &examples, &vocab, &provider);
    (model, data, vocab)
}

/// Constant 1e-3 after a 20-step warmup, one full-batch step per epoch, no
/// weight decay, capped at 500 steps.
pub fn overfit_train_config() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        warmup_steps: 20,
        weight_decay: 0.0,
        epochs: 500,
        train_batch: 16,
        eval_batch: 16,
        seed: HARNESS_SEED,
        max_steps: Some(500),
        constant_lr: true,
        ..TrainConfig::default()
    }
}

/// Number of examples whose greedy decode equals the gold response.
pub fn greedy_exact_matches(model: &SupportModel<f32>, params: &ParamStore<f32>, data: &[EncodedExample]) -> usize {
    let config = GenerationConfig::greedy(model.config.max_response_tokens);
    data.iter()
        .filter(|ex| {
            let g = model.generate(params, ex, &config, &mut rng::seeded(0)).unwrap();
            g.tokens == ex.response
        })
        .count()
}

pub fn misc(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_misc")).args(args).output().expect("run misc");
    assert!(
        out.status.success(),
        "misc {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Small model for end-to-end runs through the binary.
pub const TINY_CONFIG: &str = r#"{
  "model_dim": 16, "heads": 2, "ffn_dim": 32,
  "encoder_layers": 1, "decoder_layers": 1, "strategy_hidden": 16,
  "max_positions": 128, "max_decoder_positions": 48, "max_response_tokens": 40,
  "lr": 0.001, "warmup_steps": 1, "epochs": 2, "train_batch": 4, "eval_batch": 8,
  "max_steps": 4
}"#;

/// prepare-data, build-cache, train and generate into `dir`.
pub fn pipeline(dir: &Path, seed: u64) {
    let s = seed.to_string();
    let data = dir.join("data");
    let run = dir.join("run");
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("config.json"), TINY_CONFIG).unwrap();
    misc(&["prepare-data", "--synthetic", "24", "--output-dir", path_str(&data), "--seed", &s]);
    misc(&["build-cache", "--data-dir", path_str(&data), "--output", path_str(&dir.join("cache.jsonl")), "--seed", &s]);
    misc(&[
        "train",
        "--config",
        path_str(&dir.join("config.json")),
        "--data-dir",
        path_str(&data),
        "--cache",
        path_str(&dir.join("cache.jsonl")),
        "--output-dir",
        path_str(&run),
        "--seed",
        &s,
    ]);
    misc(&[
        "generate",
        "--checkpoint",
        path_str(&run.join("model.ckpt")),
        "--examples",
        path_str(&data.join("test.jsonl")),
        "--cache",
        path_str(&dir.join("cache.jsonl")),
        "--output",
        path_str(&dir.join("generations.jsonl")),
        "--top-p",
        "0.9",
        "--temperature",
        "1.0",
        "--max-length",
        "12",
        "--seed",
        &s,
    ]);
}

/// Relative paths of the files compared for determinism.
pub const PIPELINE_OUTPUTS: [&str; 9] = [
    "data/train.jsonl",
    "data/dev.jsonl",
    "data/test.jsonl",
    "data/vocab.txt",
    "cache.jsonl",
    "run/metrics.csv",
    "run/config.json",
    "run/model.ckpt",
    "generations.jsonl",
];
