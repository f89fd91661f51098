//! Transformer encoder, context/block layout, and context-aware block refinement.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::{Attention, FeedForward, Mask, Norm, Pass};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;
use crate::vocab::{TokenId, CLS, EOS};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            heads: 2,
            model_dim: 64,
            ffn_dim: 128,
            max_positions: 256,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::contract("model_dim must be divisible by heads"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract("dropout must lie in [0, 1)"));
        }
        if self.model_dim < 2 || self.max_positions < 3 {
            return Err(Error::contract("model_dim >= 2 and max_positions >= 3 required"));
        }
        Ok(())
    }
}

/// Token layout of an encoded context: `CLS u₁ EOS u₂ EOS … uₙ EOS`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContextLayout {
    pub ids: Vec<TokenId>,
    pub eos_positions: Vec<usize>,
    /// Oldest utterances removed to fit `max_positions`.
    pub dropped_utterances: usize,
}

/// Lays out tokenized utterances, dropping the oldest ones (and finally the
/// oldest tokens of the newest one) until the sequence fits.
pub fn context_layout(utterances: &[Vec<TokenId>], max_positions: usize) -> Result<ContextLayout> {
    if utterances.is_empty() {
        return Err(Error::contract("context has no utterances"));
    }
    let mut first = 0;
    let total = |from: usize| 1 + utterances[from..].iter().map(|u| u.len() + 1).sum::<usize>();
    while first + 1 < utterances.len() && total(first) > max_positions {
        first += 1;
    }
    let mut ids = vec![CLS];
    let mut eos_positions = Vec::new();
    for u in &utterances[first..] {
        let room = max_positions.saturating_sub(ids.len() + 1);
        let keep = &u[u.len().saturating_sub(room)..];
        ids.extend_from_slice(keep);
        eos_positions.push(ids.len());
        ids.push(EOS);
    }
    Ok(ContextLayout {
        ids,
        eos_positions,
        dropped_utterances: first,
    })
}

/// `CLS tail EOS` for each block, packed into one sequence with per-block
/// positions and segment ids. Returns `(ids, positions, segments, starts)`.
pub fn pack_blocks(blocks: &[Vec<TokenId>], max_positions: usize) -> (Vec<TokenId>, Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut ids = Vec::new();
    let mut positions = Vec::new();
    let mut segments = Vec::new();
    let mut starts = Vec::with_capacity(blocks.len());
    for (b, tail) in blocks.iter().enumerate() {
        starts.push(ids.len());
        let tail = &tail[..tail.len().min(max_positions.saturating_sub(2))];
        let seq = core::iter::once(CLS).chain(tail.iter().copied()).chain(core::iter::once(EOS));
        for (p, id) in seq.enumerate() {
            ids.push(id);
            positions.push(p);
            segments.push(b);
        }
    }
    (ids, positions, segments, starts)
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attention: Attention,
    pub attention_norm: Norm,
    pub ffn: FeedForward,
    pub ffn_norm: Norm,
}

/// Token and position embeddings shared by both stacks.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub tokens: ParamId,
    pub encoder_positions: ParamId,
    pub decoder_positions: ParamId,
    pub encoder_norm: Norm,
    pub decoder_norm: Norm,
}

impl Embeddings {
    pub fn embed<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        ids: &[TokenId],
        positions: &[usize],
        decoder: bool,
    ) -> Result<Var> {
        let table = tape.param(store, self.tokens);
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let tok = tape.embedding(table, &idx)?;
        let (pos_table, norm) = if decoder {
            (self.decoder_positions, &self.decoder_norm)
        } else {
            (self.encoder_positions, &self.encoder_norm)
        };
        let pt = tape.param(store, pos_table);
        let pos = tape.embedding(pt, positions)?;
        let x = tape.add(tok, pos)?;
        norm.forward(tape, store, x)
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, config: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let layers = (0..config.layers)
            .map(|l| {
                let name = alloc::format!("encoder.layer{l}");
                EncoderLayer {
                    attention: Attention::new(store, &alloc::format!("{name}.self_attention"), config.model_dim, config.heads, rng),
                    attention_norm: Norm::new(store, &alloc::format!("{name}.attention_norm"), config.model_dim, rng),
                    ffn: FeedForward::new(store, &alloc::format!("{name}.ffn"), config.model_dim, config.ffn_dim, rng),
                    ffn_norm: Norm::new(store, &alloc::format!("{name}.ffn_norm"), config.model_dim, rng),
                }
            })
            .collect();
        Encoder { layers }
    }

    /// Post-norm transformer stack over already-embedded inputs.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        mut x: Var,
        mask: Mask<'_>,
        pass: &mut Pass<'_>,
    ) -> Result<Var> {
        for layer in &self.layers {
            let a = layer.attention.forward(tape, store, x, x, mask)?;
            let a = pass.drop(tape, a.output);
            let h = tape.add(x, a)?;
            let h = layer.attention_norm.forward(tape, store, h)?;
            let f = layer.ffn.forward(tape, store, h, pass)?;
            let f = pass.drop(tape, f);
            let h2 = tape.add(h, f)?;
            x = layer.ffn_norm.forward(tape, store, h2)?;
        }
        Ok(x)
    }
}

/// Encoder output for a dialogue context.
#[derive(Debug, Clone, Copy)]
pub struct ContextEncoding {
    /// `L × d` states, row 0 is CLS.
    pub states: Var,
    /// `1 × d` CLS state.
    pub cls_state: Var,
}

/// Raw and context-refined block matrices with the refinement attention.
#[derive(Debug, Clone, Copy)]
pub struct RefinedBlocks {
    pub raw: Var,
    pub refined: Var,
    /// `N × L` rows of `softmax(raw · Cᵀ)`.
    pub weights: Var,
}

/// `Z = softmax(Ĥ·Cᵀ)·C`, `H = LN(Ĥ + Z)`. No scaling, no projections.
pub fn refine_blocks<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    norm: &Norm,
    raw: Var,
    context: Var,
) -> Result<RefinedBlocks> {
    let scores = tape.matmul_nt(raw, context)?;
    let weights = tape.softmax_rows(scores);
    let z = tape.matmul(weights, context)?;
    let sum = tape.add(raw, z)?;
    let refined = norm.forward(tape, store, sum)?;
    Ok(RefinedBlocks { raw, refined, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_of_two_utterances() {
        let l = context_layout(&[vec![10, 11, 12], vec![13, 14, 15]], 256).unwrap();
        assert_eq!(l.ids.len(), 1 + 3 + 1 + 3 + 1);
        assert_eq!(l.ids[0], CLS);
        assert_eq!(l.eos_positions, [4, 8]);
        assert_eq!(l.ids[4], EOS);
    }

    #[test]
    fn single_utterance_has_cls_first() {
        let l = context_layout(&[vec![7]], 256).unwrap();
        assert_eq!(l.ids, [CLS, 7, EOS]);
    }

    #[test]
    fn overlong_context_drops_oldest_first() {
        let l = context_layout(&[vec![5; 4], vec![6; 4], vec![7; 4]], 11).unwrap();
        assert_eq!(l.dropped_utterances, 1);
        assert_eq!(l.ids, [CLS, 6, 6, 6, 6, EOS, 7, 7, 7, 7, EOS]);
        let l = context_layout(&[vec![5; 4], vec![9, 8, 7, 6, 5]], 5).unwrap();
        assert_eq!(l.ids, [CLS, 7, 6, 5, EOS]);
    }

    #[test]
    fn empty_context_is_an_error() {
        assert!(context_layout(&[], 10).is_err());
    }

    #[test]
    fn blocks_pack_with_restarting_positions() {
        let (ids, pos, seg, starts) = pack_blocks(&[vec![9, 9], vec![8]], 64);
        assert_eq!(ids, [CLS, 9, 9, EOS, CLS, 8, EOS]);
        assert_eq!(pos, [0, 1, 2, 3, 0, 1, 2]);
        assert_eq!(seg, [0, 0, 0, 0, 1, 1, 1]);
        assert_eq!(starts, [0, 4]);
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        assert!(EncoderConfig { heads: 3, ..Default::default() }.validate().is_err());
        assert!(EncoderConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
    }
}
