//! Next-token sampling: repetition penalty, temperature, top-k and nucleus
//! filtering.

use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Scalar;
use crate::vocab::TokenId;

/// One transformation of the candidate logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Stage {
    RepetitionPenalty,
    Temperature,
    TopK,
    TopP,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GenerationConfig {
    pub top_p: f64,
    pub top_k: usize,
    pub temperature: f64,
    pub repetition_penalty: f64,
    pub max_length: usize,
    pub order: Vec<Stage>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            top_p: 0.3,
            top_k: 30,
            temperature: 0.7,
            repetition_penalty: 1.03,
            max_length: 40,
            order: Self::DEFAULT_ORDER.to_vec(),
        }
    }
}

impl GenerationConfig {
    pub const DEFAULT_ORDER: [Stage; 4] = [Stage::RepetitionPenalty, Stage::Temperature, Stage::TopK, Stage::TopP];

    /// Deterministic argmax decoding (top-k = 1).
    pub fn greedy(max_length: usize) -> Self {
        GenerationConfig {
            top_k: 1,
            max_length,
            ..Default::default()
        }
    }

    /// Plain categorical sampling over `vocab` tokens.
    pub fn unfiltered(vocab: usize, max_length: usize) -> Self {
        GenerationConfig {
            top_p: 1.0,
            top_k: vocab,
            temperature: 1.0,
            repetition_penalty: 1.0,
            max_length,
            order: Self::DEFAULT_ORDER.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::contract("top_p must lie in (0, 1]"));
        }
        if self.top_k == 0 {
            return Err(Error::contract("top_k must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::contract("temperature must be positive"));
        }
        if !(self.repetition_penalty >= 1.0) {
            return Err(Error::contract("repetition_penalty must be at least 1"));
        }
        Ok(())
    }
}

/// Divides positive logits of already generated tokens by `penalty` and
/// multiplies negative ones.
pub fn apply_repetition_penalty(logits: &mut [f64], history: &[TokenId], penalty: f64) {
    let mut seen: Vec<usize> = history.iter().map(|&t| t as usize).filter(|&t| t < logits.len()).collect();
    seen.sort_unstable();
    seen.dedup();
    for t in seen {
        let x = logits[t];
        logits[t] = if x > 0.0 { x / penalty } else { x * penalty };
    }
}

/// Candidate tokens and normalized probabilities after the full pipeline.
/// The set is never empty for finite logits.
pub fn filtered_distribution(logits: &[f64], config: &GenerationConfig, history: &[TokenId]) -> Result<Vec<(usize, f64)>> {
    config.validate()?;
    if logits.is_empty() {
        return Err(Error::contract("no logits"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let mut work = logits.to_vec();
    // candidates sorted by descending logit, ties by index
    let mut cand: Vec<usize> = (0..work.len()).collect();
    for stage in &config.order {
        match stage {
            Stage::RepetitionPenalty => apply_repetition_penalty(&mut work, history, config.repetition_penalty),
            Stage::Temperature => work.iter_mut().for_each(|x| *x /= config.temperature),
            Stage::TopK => {
                sort_desc(&mut cand, &work);
                cand.truncate(config.top_k.max(1));
            }
            Stage::TopP => {
                sort_desc(&mut cand, &work);
                let probs = softmax_over(&cand, &work);
                let mut mass = 0.0;
                let mut keep = 0;
                for p in &probs {
                    mass += p;
                    keep += 1;
                    if mass >= config.top_p {
                        break;
                    }
                }
                cand.truncate(keep.max(1));
            }
        }
    }
    sort_desc(&mut cand, &work);
    let probs = softmax_over(&cand, &work);
    Ok(cand.into_iter().zip(probs).collect())
}

fn sort_desc(cand: &mut [usize], logits: &[f64]) {
    cand.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
}

fn softmax_over(cand: &[usize], logits: &[f64]) -> Vec<f64> {
    let max = cand.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = cand.iter().map(|&i| Float::exp(logits[i] - max)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Samples the next token id.
pub fn sample_token<S: Scalar>(logits: &[S], config: &GenerationConfig, history: &[TokenId], rng: &mut impl Rng) -> Result<TokenId> {
    let wide: Vec<f64> = logits.iter().map(|x| x.as_f64()).collect();
    let dist = filtered_distribution(&wide, config, history)?;
    if dist.len() == 1 {
        return Ok(dist[0].0 as TokenId);
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(tok, p) in &dist {
        acc += p;
        if u < acc {
            return Ok(tok as TokenId);
        }
    }
    Ok(dist[dist.len() - 1].0 as TokenId)
}
