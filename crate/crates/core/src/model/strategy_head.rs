//! Strategy classifier over the CLS state and the strategy codebook.

use alloc::vec::Vec;

use rand::Rng;

use super::layers::Linear;
use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::strategy::{StrategyId, NUM_STRATEGIES};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// How the strategy vector `h^g` is formed from the classifier output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StrategyMode {
    /// `h^g = p^g · T`
    #[default]
    Mixture,
    /// The codebook row of the most probable strategy.
    Single,
    /// Training mixes with the one-hot gold label; inference uses the mixture.
    GoldMixture,
}

#[derive(Debug, Clone)]
pub struct StrategyHead {
    pub hidden: Linear,
    pub output: Linear,
    /// `m × d` codebook `T`.
    pub codebook: ParamId,
}

impl StrategyHead {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        StrategyHead {
            hidden: Linear::new(store, "strategy.mlp.hidden", dim, hidden, rng),
            output: Linear::new(store, "strategy.mlp.output", hidden, NUM_STRATEGIES, rng),
            codebook: store.add("strategy.codebook", &[NUM_STRATEGIES, dim], Init::Normal, rng),
        }
    }

    /// Pre-softmax logits `1 × m` from a `1 × d` CLS state.
    pub fn logits<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, cls: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, cls)?;
        let h = tape.gelu(h);
        self.output.forward(tape, store, h)
    }

    /// Returns `(logits, p^g)`.
    pub fn predict<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, cls: Var) -> Result<(Var, Var)> {
        let logits = self.logits(tape, store, cls)?;
        let probs = tape.softmax_rows(logits);
        Ok((logits, probs))
    }

    /// `h^g = p · T` for a `1 × m` distribution.
    pub fn mix<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, probs: Var) -> Result<Var> {
        let t = tape.param(store, self.codebook);
        mix(tape, probs, t)
    }

    /// Codebook row `k`.
    pub fn select<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, k: StrategyId) -> Result<Var> {
        let t = tape.param(store, self.codebook);
        tape.embedding(t, &[k.index()])
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self.hidden.ids().into_iter().chain(self.output.ids()).collect();
        v.push(self.codebook);
        v
    }
}

/// Convex combination of codebook rows: `(1×m) · (m×d)`.
pub fn mix<S: Scalar>(tape: &mut Tape<S>, probs: Var, codebook: Var) -> Result<Var> {
    tape.matmul(probs, codebook)
}

/// One-hot at the argmax; ties go to the lowest index.
pub fn one_hot_select<S: Scalar>(p: &[S]) -> Vec<S> {
    let k = argmax(p);
    (0..p.len()).map(|i| if i == k { S::one() } else { S::zero() }).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<S: Scalar>(p: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// The `k` highest-scoring strategies, descending; equal logits keep index order.
pub fn top_k_strategies<S: Scalar>(logits: &[S], k: usize) -> Result<Vec<StrategyId>> {
    if k == 0 || k > NUM_STRATEGIES || logits.len() != NUM_STRATEGIES {
        return Err(Error::contract(alloc::format!(
            "top-k needs 1 <= k <= {NUM_STRATEGIES} over {NUM_STRATEGIES} logits"
        )));
    }
    let mut order: Vec<usize> = (0..NUM_STRATEGIES).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap_or(core::cmp::Ordering::Equal));
    Ok(order[..k].iter().map(|&i| StrategyId::ALL[i]).collect())
}

/// Probabilities from logits (single row).
pub fn distribution<S: Scalar>(logits: &[S]) -> Vec<S> {
    crate::tensor::softmax_rows(&Tensor::vector(logits.to_vec()), None).into_data()
}
