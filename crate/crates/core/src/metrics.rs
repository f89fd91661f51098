//! Automatic evaluation: strategy accuracy, perplexity, BLEU, ROUGE-L,
//! METEOR-lite, Distinct-n, plus the stage and attention analyses.
//!
//! Text metrics work on pre-tokenized sentences of any ordered token type.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::commonsense::{BlockSource, MentalBlock, Relation};
use crate::error::{Error, Result};
use crate::model::strategy_head::top_k_strategies;
use crate::model::AttentionWeights;
use crate::strategy::{StrategyId, NUM_STRATEGIES};

/// Top-1 accuracy and accuracy@k for k = 1..=8.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyAccuracy {
    pub acc: f64,
    /// `top_k[k - 1]` is accuracy@k.
    pub top_k: [f64; NUM_STRATEGIES],
}

pub fn strategy_accuracy(logits: &[Vec<f64>], golds: &[StrategyId]) -> Result<StrategyAccuracy> {
    if logits.is_empty() {
        return Err(Error::contract("strategy accuracy over no examples"));
    }
    if logits.len() != golds.len() {
        return Err(Error::contract("predictions and gold labels differ in length"));
    }
    let mut hits = [0usize; NUM_STRATEGIES];
    for (l, g) in logits.iter().zip(golds) {
        let ranked = top_k_strategies(l, NUM_STRATEGIES)?;
        let rank = ranked.iter().position(|s| s == g).expect("all strategies ranked");
        for h in &mut hits[rank..] {
            *h += 1;
        }
    }
    let n = logits.len() as f64;
    let top_k = hits.map(|h| h as f64 / n);
    Ok(StrategyAccuracy { acc: top_k[0], top_k })
}

/// `exp(mean NLL)` from per-token probabilities of the gold tokens.
pub fn perplexity(gold_token_probs: &[f64]) -> Result<f64> {
    if gold_token_probs.is_empty() {
        return Err(Error::contract("perplexity over no tokens"));
    }
    let nll: f64 = gold_token_probs.iter().map(|&p| -Float::ln(p)).sum();
    Ok(Float::exp(nll / gold_token_probs.len() as f64))
}

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut m = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn check_aligned<A, B>(c: &[A], r: &[B]) -> Result<()> {
    if c.is_empty() {
        return Err(Error::contract("empty corpus"));
    }
    if c.len() != r.len() {
        return Err(Error::contract("candidates and references differ in length"));
    }
    Ok(())
}

/// Corpus BLEU-n in percent: geometric mean of clipped 1..n-gram precisions
/// times the brevity penalty. A zero higher-order count becomes
/// `(0 + 1) / (total + 1)`.
pub fn bleu<T: Ord>(candidates: &[Vec<T>], references: &[Vec<T>], n: usize) -> Result<f64> {
    check_aligned(candidates, references)?;
    if n == 0 {
        return Err(Error::contract("BLEU order must be positive"));
    }
    let mut matched = alloc::vec![0usize; n];
    let mut total = alloc::vec![0usize; n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for k in 1..=n {
            let rc = ngram_counts(r, k);
            for (g, cnt) in ngram_counts(c, k) {
                matched[k - 1] += cnt.min(rc.get(g).copied().unwrap_or(0));
                total[k - 1] += cnt;
            }
        }
    }
    if c_len == 0 || matched[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for k in 0..n {
        let p = if k > 0 && matched[k] == 0 {
            1.0 / (total[k] as f64 + 1.0)
        } else {
            matched[k] as f64 / total[k] as f64
        };
        log_sum += Float::ln(p);
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        Float::exp(1.0 - r_len as f64 / c_len as f64)
    };
    Ok(100.0 * bp * Float::exp(log_sum / n as f64))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = prev.clone();
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean per-pair LCS F-measure in percent; `beta = 1` is plain F1.
pub fn rouge_l<T: PartialEq>(candidates: &[Vec<T>], references: &[Vec<T>], beta: f64) -> Result<f64> {
    check_aligned(candidates, references)?;
    let b2 = beta * beta;
    let mut sum = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        let l = lcs_len(c, r);
        if l == 0 {
            continue;
        }
        let p = l as f64 / c.len() as f64;
        let rec = l as f64 / r.len() as f64;
        sum += (1.0 + b2) * p * rec / (rec + b2 * p);
    }
    Ok(100.0 * sum / candidates.len() as f64)
}

/// Unique n-grams over total n-grams across all candidates, in percent.
pub fn distinct_n<T: Ord>(candidates: &[Vec<T>], n: usize) -> f64 {
    let mut unique: BTreeMap<&[T], ()> = BTreeMap::new();
    let mut total = 0usize;
    for c in candidates {
        if n == 0 || c.len() < n {
            continue;
        }
        for w in c.windows(n) {
            unique.insert(w, ());
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    100.0 * unique.len() as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        MeteorParams {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
        }
    }
}

/// Exact-match alignment: each candidate token, left to right, takes the
/// leftmost unused equal reference token. Returns `(cand, ref)` index pairs.
pub fn align_exact<T: PartialEq>(candidate: &[T], reference: &[T]) -> Vec<(usize, usize)> {
    let mut used = alloc::vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (i, c) in candidate.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && reference[j] == *c) {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Sentence-level METEOR-lite in `[0, 1]`.
pub fn meteor_sentence<T: PartialEq>(candidate: &[T], reference: &[T], params: MeteorParams) -> f64 {
    let pairs = align_exact(candidate, reference);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let mut chunks = 1;
    for w in pairs.windows(2) {
        if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
            chunks += 1;
        }
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = p * r / (params.alpha * p + (1.0 - params.alpha) * r);
    let penalty = params.gamma * Float::powf(chunks as f64 / m as f64, params.beta);
    f_mean * (1.0 - penalty)
}

/// Corpus mean of [`meteor_sentence`], in percent.
pub fn meteor_lite<T: PartialEq>(candidates: &[Vec<T>], references: &[Vec<T>], params: MeteorParams) -> Result<f64> {
    check_aligned(candidates, references)?;
    let sum: f64 = candidates.iter().zip(references).map(|(c, r)| meteor_sentence(c, r, params)).sum();
    Ok(100.0 * sum / candidates.len() as f64)
}

/// Variant choices that make the text metrics reproducible.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricVariants {
    pub bleu_smoothing: String,
    pub rouge_beta: f64,
    pub meteor: MeteorParams,
    pub meteor_matching: String,
    pub tokenizer: String,
}

impl Default for MetricVariants {
    fn default() -> Self {
        MetricVariants {
            bleu_smoothing: "add-one on zero higher-order counts".into(),
            rouge_beta: 1.0,
            meteor: MeteorParams::default(),
            meteor_matching: "exact".into(),
            tokenizer: "lowercase word/punctuation".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub variants: MetricVariants,
    pub examples: usize,
    pub acc: f64,
    /// Accuracy@k keyed by k.
    pub top_k_acc: BTreeMap<usize, f64>,
    pub ppl: Option<f64>,
    pub bleu2: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub distinct1: f64,
    pub distinct2: f64,
}

impl MetricReport {
    /// Text metrics and strategy accuracy for a generation run.
    pub fn compute<T: Ord>(
        generated: &[Vec<T>],
        gold: &[Vec<T>],
        strategy_logits: &[Vec<f64>],
        gold_strategies: &[StrategyId],
        ppl: Option<f64>,
        variants: MetricVariants,
    ) -> Result<Self> {
        let acc = strategy_accuracy(strategy_logits, gold_strategies)?;
        Ok(MetricReport {
            examples: generated.len(),
            acc: acc.acc,
            top_k_acc: (1..=NUM_STRATEGIES).map(|k| (k, acc.top_k[k - 1])).collect(),
            ppl,
            bleu2: bleu(generated, gold, 2)?,
            bleu4: bleu(generated, gold, 4)?,
            rouge_l: rouge_l(generated, gold, variants.rouge_beta)?,
            meteor: meteor_lite(generated, gold, variants.meteor)?,
            distinct1: distinct_n(generated, 1),
            distinct2: distinct_n(generated, 2),
            variants,
        })
    }
}

/// Strategy counts per conversation-progress bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageHistogram {
    pub counts: Vec<[usize; NUM_STRATEGIES]>,
}

pub const STAGE_BINS: usize = 5;

impl StageHistogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// `[lo, hi)` progress interval of a bin.
    pub fn interval(&self, bin: usize) -> (f64, f64) {
        let w = 1.0 / self.bins() as f64;
        (bin as f64 * w, (bin + 1) as f64 * w)
    }

    pub fn total(&self, bin: usize) -> usize {
        self.counts[bin].iter().sum()
    }

    /// Per-strategy proportions; all zero for an empty bin.
    pub fn proportions(&self, bin: usize) -> [f64; NUM_STRATEGIES] {
        let t = self.total(bin);
        if t == 0 {
            return [0.0; NUM_STRATEGIES];
        }
        self.counts[bin].map(|c| c as f64 / t as f64)
    }
}

/// Buckets `(progress, strategy)` records into `bins` equal-width bins over
/// `[0, 1]`; progress 1 falls in the last bin.
pub fn stage_distribution(records: &[(f64, StrategyId)], bins: usize) -> Result<StageHistogram> {
    if bins == 0 {
        return Err(Error::contract("at least one stage bin is required"));
    }
    let mut counts = alloc::vec![[0usize; NUM_STRATEGIES]; bins];
    for &(p, s) in records {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::contract(alloc::format!("progress {p} outside [0, 1]")));
        }
        let b = ((p * bins as f64) as usize).min(bins - 1);
        counts[b][s.index()] += 1;
    }
    Ok(StageHistogram { counts })
}

/// One block and its refinement attention over the context positions.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockAttention {
    pub relation: Relation,
    pub tail: String,
    pub source: BlockSource,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttentionDump {
    pub example_id: String,
    /// Context tokens in encoder order (the columns of every weight row).
    pub context_tokens: Vec<String>,
    pub situation: Vec<BlockAttention>,
    pub post: Vec<BlockAttention>,
    pub strategy_distribution: Vec<f64>,
}

impl AttentionDump {
    pub fn new(
        example_id: &str,
        context_tokens: Vec<String>,
        situation_blocks: &[MentalBlock],
        post_blocks: &[MentalBlock],
        weights: AttentionWeights,
    ) -> Self {
        let pair = |blocks: &[MentalBlock], rows: Vec<Vec<f64>>| -> Vec<BlockAttention> {
            blocks
                .iter()
                .zip(rows)
                .map(|(b, w)| BlockAttention {
                    relation: b.relation,
                    tail: b.tail.clone(),
                    source: b.source,
                    weights: w,
                })
                .collect()
        };
        AttentionDump {
            example_id: example_id.into(),
            context_tokens,
            situation: pair(situation_blocks, weights.situation),
            post: pair(post_blocks, weights.post),
            strategy_distribution: weights.strategy_probs,
        }
    }

    /// Largest deviation of any weight row's sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        self.situation
            .iter()
            .chain(&self.post)
            .map(|b| Float::abs(b.weights.iter().sum::<f64>() - 1.0))
            .fold(0.0, f64::max)
    }
}
