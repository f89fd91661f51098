//! Joint training of response generation and strategy prediction.

use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::layers::Pass;
use crate::model::{EncodedExample, FactorFlags, SupportModel};
use crate::optim::{clip_global_norm, lr_schedule, AdamW, AdamWConfig};
use crate::params::ParamStore;
use crate::rng;
use crate::tape::Tape;
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub train_batch: usize,
    pub eval_batch: usize,
    pub seed: u64,
    pub use_g: bool,
    pub use_s: bool,
    pub use_x: bool,
    /// Hard cap on optimizer steps; the schedule decays to zero here when set.
    pub max_steps: Option<usize>,
    pub clip_norm: f64,
    /// Keep the peak rate after warmup instead of decaying it.
    pub constant_lr: bool,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-5,
            warmup_steps: 120,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            epochs: 8,
            train_batch: 20,
            eval_batch: 50,
            seed: 0,
            use_g: true,
            use_s: true,
            use_x: true,
            max_steps: None,
            clip_norm: 1.0,
            constant_lr: false,
            dropout: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::contract("lr must be positive"));
        }
        if self.train_batch == 0 || self.eval_batch == 0 {
            return Err(Error::contract("batch sizes must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract("dropout must lie in [0, 1)"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::contract("clip_norm must be positive"));
        }
        Ok(())
    }

    pub fn flags(&self) -> FactorFlags {
        FactorFlags {
            use_g: self.use_g,
            use_s: self.use_s,
            use_x: self.use_x,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Steps the schedule is laid out over.
    pub fn total_steps(&self, train_len: usize) -> usize {
        let per_epoch = train_len.div_ceil(self.train_batch);
        let planned = per_epoch * self.epochs;
        self.max_steps.map_or(planned, |m| m.min(planned))
    }
}

/// Loss of one batch. `l` is the f64 sum of the two parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// Mean NLL per gold response token.
    pub l_r: f64,
    /// Mean NLL of the gold strategy; 0 when the strategy factor is off.
    pub l_g: f64,
    pub l: f64,
    pub tokens: usize,
    pub step: usize,
}

impl LossReport {
    pub fn new(l_r: f64, l_g: f64, tokens: usize, step: usize) -> Self {
        LossReport {
            l_r,
            l_g,
            l: l_r + l_g,
            tokens,
            step,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_r.is_finite() && self.l_g.is_finite() && self.l.is_finite()
    }
}

/// Joint loss of a batch in evaluation mode.
pub fn joint_loss<S: Scalar>(model: &SupportModel<S>, batch: &[EncodedExample]) -> Result<LossReport> {
    let mut tape = Tape::new();
    let out = model.batch_loss(&mut tape, &model.params, batch, &mut Pass::eval())?;
    Ok(LossReport::new(out.response_loss, out.strategy_loss.unwrap_or(0.0), out.tokens, 0))
}

/// Token-level NLL totals and strategy logits over a split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitEval {
    pub nll_sum: f64,
    pub tokens: usize,
    /// Mean strategy NLL over examples (0 with the strategy factor off).
    pub strategy_nll: f64,
    pub strategy_logits: Vec<Vec<f64>>,
}

impl SplitEval {
    pub fn perplexity(&self) -> f64 {
        perplexity_from_nll(self.nll_sum, self.tokens)
    }

    pub fn response_nll(&self) -> f64 {
        self.nll_sum / self.tokens.max(1) as f64
    }
}

/// `exp(total NLL / tokens)`.
pub fn perplexity_from_nll(nll_sum: f64, tokens: usize) -> f64 {
    if tokens == 0 {
        return f64::NAN;
    }
    Float::exp(nll_sum / tokens as f64)
}

/// Evaluates `store` on `examples` in chunks of `batch`.
pub fn evaluate_split<S: Scalar>(model: &SupportModel<S>, store: &ParamStore<S>, examples: &[EncodedExample], batch: usize) -> Result<SplitEval> {
    if examples.is_empty() {
        return Err(Error::contract("empty evaluation split"));
    }
    let mut eval = SplitEval {
        nll_sum: 0.0,
        tokens: 0,
        strategy_nll: 0.0,
        strategy_logits: Vec::with_capacity(examples.len()),
    };
    for chunk in examples.chunks(batch.max(1)) {
        let mut tape = Tape::new();
        let out = model.batch_loss(&mut tape, store, chunk, &mut Pass::eval())?;
        eval.nll_sum += out.response_loss * out.tokens as f64;
        eval.tokens += out.tokens;
        eval.strategy_nll += out.strategy_loss.unwrap_or(0.0) * chunk.len() as f64;
        eval.strategy_logits.extend(out.strategy_logits);
    }
    eval.strategy_nll /= examples.len() as f64;
    Ok(eval)
}

/// One row of the training log. `dev_ppl` is set on epoch-end rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: LossReport,
    pub dev_ppl: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    /// Parameters of the epoch with the lowest dev perplexity.
    pub best: ParamStore<S>,
    pub best_dev_ppl: f64,
    pub best_epoch: usize,
    pub dev_ppl_per_epoch: Vec<f64>,
    pub log: Vec<LogRow>,
    pub steps: usize,
}

/// Trains `model` in place. The model's factor flags are overwritten by the
/// config. After each epoch the dev split is scored; the parameters with the
/// lowest dev perplexity are returned in the outcome. `observer` sees every
/// log row, with the dev evaluation on epoch-end rows, and may stop training
/// early, in which case the current epoch is still scored.
pub fn train<S: Scalar>(
    model: &mut SupportModel<S>,
    train: &[EncodedExample],
    dev: &[EncodedExample],
    config: &TrainConfig,
    mut observer: impl FnMut(&LogRow, Option<&SplitEval>, &SupportModel<S>) -> Control,
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::contract("empty training split"));
    }
    if dev.is_empty() {
        return Err(Error::contract("empty dev split"));
    }
    model.config.flags = config.flags();
    let total = config.total_steps(train.len());
    let mut optimizer = AdamW::new(config.adamw(), &model.params);
    let mut order_rng = rng::derive(config.seed, "batches");
    let mut dropout_rng = rng::derive(config.seed, "dropout");
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut log = Vec::new();
    let mut best: Option<(ParamStore<S>, f64, usize)> = None;
    let mut per_epoch = Vec::new();
    let mut step = 0;
    let mut stop = false;
    for epoch in 0..config.epochs {
        if step >= total {
            break;
        }
        order.shuffle(&mut order_rng);
        let batches: Vec<Vec<EncodedExample>> = order
            .chunks(config.train_batch)
            .map(|c| c.iter().map(|&i| train[i].clone()).collect())
            .collect();
        let n_batches = batches.len();
        for (b, batch) in batches.into_iter().enumerate() {
            if step >= total {
                break;
            }
            let lr = lr_schedule(step + 1, config.lr, config.warmup_steps, total, config.constant_lr);
            let mut tape = Tape::new();
            let mut pass = Pass::train(&mut dropout_rng, config.dropout);
            let out = model.batch_loss(&mut tape, &model.params, &batch, &mut pass)?;
            let mut grads = tape.backward(out.loss, &model.params)?;
            clip_global_norm(&mut grads, config.clip_norm);
            optimizer.step(&mut model.params, &grads, lr)?;
            step += 1;

            let report = LossReport::new(out.response_loss, out.strategy_loss.unwrap_or(0.0), out.tokens, step);
            if !report.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            let epoch_end = b + 1 == n_batches || step >= total;
            let mut row = LogRow {
                step,
                lr,
                loss: report,
                dev_ppl: None,
            };
            if !epoch_end && observer(&row, None, model) == Control::Stop {
                stop = true;
            }
            if epoch_end || stop {
                let eval = evaluate_split(model, &model.params, dev, config.eval_batch)?;
                let ppl = eval.perplexity();
                per_epoch.push(ppl);
                row.dev_ppl = Some(ppl);
                if best.as_ref().is_none_or(|(_, p, _)| ppl < *p) {
                    best = Some((model.params.clone(), ppl, epoch));
                }
                if !stop && observer(&row, Some(&eval), model) == Control::Stop {
                    stop = true;
                }
            }
            log.push(row);
            if stop {
                break;
            }
        }
        if stop {
            break;
        }
    }
    let (best, best_dev_ppl, best_epoch) = best.ok_or_else(|| Error::contract("no training step was taken"))?;
    Ok(TrainOutcome {
        best,
        best_dev_ppl,
        best_epoch,
        dev_ppl_per_epoch: per_epoch,
        log,
        steps: step,
    })
}
