//! Decoder whose cross-attention attends separately to the context, the two
//! refined block sets, and the strategy vector, then fuses the results.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::encoder::Embeddings;
use super::layers::{Attention, FeedForward, Mask, Norm, Pass};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;
use crate::vocab::{TokenId, BOS};

/// The four conditioning factors, in fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Context,
    Situation,
    Post,
    Strategy,
}

impl Factor {
    pub const ALL: [Factor; 4] = [Factor::Context, Factor::Situation, Factor::Post, Factor::Strategy];
}

/// Factor memories on a tape. `None` means the factor is disabled or empty
/// and contributes nothing to the fusion.
#[derive(Debug, Clone, Copy, Default)]
pub struct FactorSet {
    pub context: Option<Var>,
    pub situation: Option<Var>,
    pub post: Option<Var>,
    /// `1 × d` strategy vector.
    pub strategy: Option<Var>,
}

impl FactorSet {
    pub fn get(&self, f: Factor) -> Option<Var> {
        match f {
            Factor::Context => self.context,
            Factor::Situation => self.situation,
            Factor::Post => self.post,
            Factor::Strategy => self.strategy,
        }
    }
}

/// Per-factor attention outputs and the fused result of one layer.
#[derive(Debug, Clone)]
pub struct FactorAttention {
    /// `A^c, A^s, A^x, A^g`; `None` for absent factors.
    pub outputs: [Option<Var>; 4],
    /// `O' = LN(A^c + A^s + A^x + A^g + O)`
    pub fused: Var,
    /// Per-factor, per-head attention weights.
    pub weights: [Vec<Var>; 4],
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attention: Attention,
    pub self_norm: Norm,
    /// One module per factor, or a single shared one.
    pub factor_attention: Vec<Attention>,
    pub fusion_norm: Norm,
    pub ffn: FeedForward,
    pub ffn_norm: Norm,
}

impl DecoderLayer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        index: usize,
        dim: usize,
        heads: usize,
        ffn: usize,
        shared_factor_attention: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let name = format!("decoder.layer{index}");
        let factor_names: &[&str] = if shared_factor_attention {
            &["shared"]
        } else {
            &["context", "situation", "post", "strategy"]
        };
        DecoderLayer {
            self_attention: Attention::new(store, &format!("{name}.self_attention"), dim, heads, rng),
            self_norm: Norm::new(store, &format!("{name}.self_norm"), dim, rng),
            factor_attention: factor_names
                .iter()
                .map(|f| Attention::new(store, &format!("{name}.cross_{f}"), dim, heads, rng))
                .collect(),
            fusion_norm: Norm::new(store, &format!("{name}.fusion_norm"), dim, rng),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, ffn, rng),
            ffn_norm: Norm::new(store, &format!("{name}.ffn_norm"), dim, rng),
        }
    }

    pub fn attention_for(&self, f: Factor) -> &Attention {
        let i = f as usize;
        &self.factor_attention[i.min(self.factor_attention.len() - 1)]
    }

    /// Parameters owned by one factor's cross-attention (empty when shared).
    pub fn factor_ids(&self, f: Factor) -> Vec<ParamId> {
        if self.factor_attention.len() == 1 {
            return Vec::new();
        }
        self.factor_attention[f as usize].ids()
    }
}

/// Cross-attends `o` to each present factor and fuses with a residual
/// LayerNorm.
pub fn multi_factor_cross_attention<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    layer: &DecoderLayer,
    o: Var,
    factors: &FactorSet,
) -> Result<FactorAttention> {
    let mut outputs = [None; 4];
    let mut weights: [Vec<Var>; 4] = Default::default();
    for f in Factor::ALL {
        if let Some(memory) = factors.get(f) {
            let a = layer.attention_for(f).forward(tape, store, o, memory, Mask::Full)?;
            outputs[f as usize] = Some(a.output);
            weights[f as usize] = a.weights;
        }
    }
    let mut acc: Option<Var> = None;
    for a in outputs.iter().flatten() {
        acc = Some(match acc {
            None => *a,
            Some(prev) => tape.add(prev, *a)?,
        });
    }
    let acc = acc.ok_or_else(|| Error::contract("every factor is disabled or empty"))?;
    let sum = tape.add(acc, o)?;
    let fused = layer.fusion_norm.forward(tape, store, sum)?;
    Ok(FactorAttention { outputs, fused, weights })
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
    pub logits_bias: ParamId,
}

/// Decoder output: `T × V` logits and each layer's factor attention.
pub struct DecoderOutput {
    pub logits: Var,
    pub layers: Vec<FactorAttention>,
}

impl Decoder {
    /// Causal self-attention, multi-factor cross-attention and feed-forward
    /// per layer; logits through the tied token embedding.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        embeddings: &Embeddings,
        prefix: &[TokenId],
        factors: &FactorSet,
        pass: &mut Pass<'_>,
    ) -> Result<DecoderOutput> {
        if prefix.first() != Some(&BOS) {
            return Err(Error::contract("decoder prefix must begin with BOS"));
        }
        let positions: Vec<usize> = (0..prefix.len()).collect();
        let mut x = embeddings.embed(tape, store, prefix, &positions, true)?;
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let a = layer.self_attention.forward(tape, store, x, x, Mask::Causal)?;
            let a = pass.drop(tape, a.output);
            let h = tape.add(x, a)?;
            let h = layer.self_norm.forward(tape, store, h)?;
            let fa = multi_factor_cross_attention(tape, store, layer, h, factors)?;
            let h = fa.fused;
            traces.push(fa);
            let f = layer.ffn.forward(tape, store, h, pass)?;
            let f = pass.drop(tape, f);
            let h2 = tape.add(h, f)?;
            x = layer.ffn_norm.forward(tape, store, h2)?;
        }
        let table = tape.param(store, embeddings.tokens);
        let logits = tape.matmul_nt(x, table)?;
        let bias = tape.param(store, self.logits_bias);
        let logits = tape.add_row(logits, bias)?;
        Ok(DecoderOutput { logits, layers: traces })
    }
}
