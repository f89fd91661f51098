//! The full model: a shared encoder for the context and the mental-state
//! blocks, context-aware block refinement, the strategy classifier and
//! codebook, and the multi-factor decoder.

pub mod decoder;
pub mod encoder;
pub mod layers;
pub mod strategy_head;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::commonsense::{query_blocks, BlockProvider, BlockSource, MentalBlock};
use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::rng::{self, SeededRng};
use crate::sampling::{sample_token, GenerationConfig};
use crate::strategy::StrategyId;
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;
use crate::vocab::{TokenId, Vocabulary, BOS, EOS, PAD};

use decoder::{Decoder, DecoderLayer, Factor, FactorSet};
use encoder::{context_layout, pack_blocks, refine_blocks, ContextEncoding, ContextLayout, Embeddings, Encoder, EncoderConfig, RefinedBlocks};
use layers::{Mask, Norm, Pass};
use strategy_head::{argmax, StrategyHead, StrategyMode};

/// Which conditioning factors are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FactorFlags {
    /// Strategy vector and strategy loss.
    pub use_g: bool,
    /// Situation blocks.
    pub use_s: bool,
    /// Last-post blocks.
    pub use_x: bool,
}

impl Default for FactorFlags {
    fn default() -> Self {
        FactorFlags {
            use_g: true,
            use_s: true,
            use_x: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub encoder: EncoderConfig,
    pub decoder_layers: usize,
    /// Decoder positions, including the leading BOS.
    pub max_decoder_positions: usize,
    pub strategy_hidden: usize,
    pub flags: FactorFlags,
    pub strategy_mode: StrategyMode,
    /// Whether the CLS state is among the keys when refining blocks.
    pub refine_include_cls: bool,
    pub shared_factor_attention: bool,
    /// Gold responses are cut to this many tokens before EOS.
    pub max_response_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            encoder: EncoderConfig::default(),
            decoder_layers: 2,
            max_decoder_positions: 64,
            strategy_hidden: 64,
            flags: FactorFlags::default(),
            strategy_mode: StrategyMode::Mixture,
            refine_include_cls: true,
            shared_factor_attention: false,
            max_response_tokens: 40,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.vocab_size <= crate::vocab::RESERVED.len() {
            return Err(Error::contract("vocabulary holds only reserved tokens"));
        }
        if self.max_response_tokens + 1 > self.max_decoder_positions {
            return Err(Error::contract("max_response_tokens + 1 must fit the decoder positions"));
        }
        if self.strategy_hidden == 0 {
            return Err(Error::contract("strategy_hidden must be positive"));
        }
        Ok(())
    }
}

/// An [`Example`] turned into token ids and retrieved blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub id: String,
    pub context: ContextLayout,
    pub situation_blocks: Vec<MentalBlock>,
    pub post_blocks: Vec<MentalBlock>,
    pub situation_ids: Vec<Vec<TokenId>>,
    pub post_ids: Vec<Vec<TokenId>>,
    /// Gold response without BOS/EOS.
    pub response: Vec<TokenId>,
    pub strategy: StrategyId,
}

impl EncodedExample {
    pub fn decoder_input(&self) -> Vec<TokenId> {
        let mut v = vec![BOS];
        v.extend_from_slice(&self.response);
        v
    }

    pub fn decoder_target(&self) -> Vec<TokenId> {
        let mut v = self.response.clone();
        v.push(EOS);
        v
    }
}

/// Everything computed before decoding.
#[derive(Debug, Clone)]
pub struct EncoderSide {
    pub context: ContextEncoding,
    pub situation: Option<RefinedBlocks>,
    pub post: Option<RefinedBlocks>,
    pub strategy_logits: Var,
    pub strategy_probs: Var,
    pub strategy_vector: Option<Var>,
    pub factors: FactorSet,
}

/// Result of a batched loss evaluation.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: Var,
    /// Mean token NLL of gold responses.
    pub response_loss: f64,
    /// Mean NLL of the gold strategy; `None` when the strategy factor is off.
    pub strategy_loss: Option<f64>,
    pub tokens: usize,
    pub strategy_logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    pub strategy_logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SupportModel<S> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
    pub embeddings: Embeddings,
    pub encoder: Encoder,
    pub situation_norm: Norm,
    pub post_norm: Norm,
    pub strategy: StrategyHead,
    pub decoder: Decoder,
}

impl<S: Scalar> SupportModel<S> {
    /// Fresh model: weights normal(0, 0.02), biases zero, LayerNorm gains one.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::derive(seed, "init");
        let mut store = ParamStore::new();
        let d = config.encoder.model_dim;
        let embeddings = Embeddings {
            tokens: store.add("embed.tokens", &[config.vocab_size, d], Init::Normal, &mut rng),
            encoder_positions: store.add("embed.encoder_positions", &[config.encoder.max_positions, d], Init::Normal, &mut rng),
            decoder_positions: store.add("embed.decoder_positions", &[config.max_decoder_positions, d], Init::Normal, &mut rng),
            encoder_norm: Norm::new(&mut store, "embed.encoder_norm", d, &mut rng),
            decoder_norm: Norm::new(&mut store, "embed.decoder_norm", d, &mut rng),
        };
        let encoder = Encoder::new(&mut store, &config.encoder, &mut rng);
        let situation_norm = Norm::new(&mut store, "refine.situation_norm", d, &mut rng);
        let post_norm = Norm::new(&mut store, "refine.post_norm", d, &mut rng);
        let strategy = StrategyHead::new(&mut store, d, config.strategy_hidden, &mut rng);
        let layers = (0..config.decoder_layers)
            .map(|l| {
                DecoderLayer::new(
                    &mut store,
                    l,
                    d,
                    config.encoder.heads,
                    config.encoder.ffn_dim,
                    config.shared_factor_attention,
                    &mut rng,
                )
            })
            .collect();
        let logits_bias = store.add("decoder.logits_bias", &[config.vocab_size], Init::Zeros, &mut rng);
        Ok(SupportModel {
            config,
            params: store,
            embeddings,
            encoder,
            situation_norm,
            post_norm,
            strategy,
            decoder: Decoder { layers, logits_bias },
        })
    }

    /// Same model at another precision.
    pub fn cast<T: Scalar>(&self) -> SupportModel<T> {
        SupportModel {
            config: self.config.clone(),
            params: self.params.cast(),
            embeddings: self.embeddings.clone(),
            encoder: self.encoder.clone(),
            situation_norm: self.situation_norm,
            post_norm: self.post_norm,
            strategy: self.strategy.clone(),
            decoder: self.decoder.clone(),
        }
    }

    /// Parameters that only the given factor uses.
    pub fn factor_param_ids(&self, factor: Factor) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = match factor {
            Factor::Context => Vec::new(),
            Factor::Situation => self.situation_norm.ids().to_vec(),
            Factor::Post => self.post_norm.ids().to_vec(),
            Factor::Strategy => self.strategy.ids(),
        };
        for layer in &self.decoder.layers {
            ids.extend(layer.factor_ids(factor));
        }
        ids
    }

    /// Tokenizes an example and retrieves its blocks.
    pub fn encode_example<P: BlockProvider + ?Sized>(&self, vocab: &Vocabulary, provider: &P, example: &Example) -> Result<EncodedExample> {
        let utterances: Vec<Vec<TokenId>> = example.context.iter().map(|u| vocab.encode(&u.text)).collect();
        let context = context_layout(&utterances, self.config.encoder.max_positions)?;
        let situation_blocks = query_blocks(provider, &example.situation, BlockSource::Situation);
        let post_blocks = query_blocks(provider, &example.last_post, BlockSource::LastPost);
        let ids = |bs: &[MentalBlock]| bs.iter().map(|b| vocab.encode(&b.tail)).collect();
        let mut response = vocab.encode(&example.response);
        response.truncate(self.config.max_response_tokens);
        Ok(EncodedExample {
            id: example.id.clone(),
            context,
            situation_ids: ids(&situation_blocks),
            post_ids: ids(&post_blocks),
            situation_blocks,
            post_blocks,
            response,
            strategy: example.strategy,
        })
    }

    pub fn encode_context(&self, tape: &mut Tape<S>, store: &ParamStore<S>, layout: &ContextLayout, pass: &mut Pass<'_>) -> Result<ContextEncoding> {
        let positions: Vec<usize> = (0..layout.ids.len()).collect();
        let x = self.embeddings.embed(tape, store, &layout.ids, &positions, false)?;
        let states = self.encoder.forward(tape, store, x, Mask::Full, pass)?;
        let cls_state = tape.slice_rows(states, 0, 1)?;
        Ok(ContextEncoding { states, cls_state })
    }

    /// First-token encoder state of every block (`N × d`), each block encoded
    /// on its own. `None` for an empty block list.
    pub fn encode_blocks(&self, tape: &mut Tape<S>, store: &ParamStore<S>, blocks: &[Vec<TokenId>], pass: &mut Pass<'_>) -> Result<Option<Var>> {
        if blocks.is_empty() {
            return Ok(None);
        }
        let (ids, positions, segments, starts) = pack_blocks(blocks, self.config.encoder.max_positions);
        let x = self.embeddings.embed(tape, store, &ids, &positions, false)?;
        let states = self.encoder.forward(tape, store, x, Mask::Segments(&segments), pass)?;
        Ok(Some(tape.embedding(states, &starts)?))
    }

    fn refinement_keys(&self, tape: &mut Tape<S>, context: &ContextEncoding) -> Result<Var> {
        let l = tape.value(context.states).rows();
        if self.config.refine_include_cls || l < 2 {
            Ok(context.states)
        } else {
            tape.slice_rows(context.states, 1, l - 1)
        }
    }

    /// Context, refined blocks, strategy prediction and the factor set.
    /// `gold` is used only by [`StrategyMode::GoldMixture`] during training.
    pub fn encode_side(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        ex: &EncodedExample,
        gold: Option<StrategyId>,
        pass: &mut Pass<'_>,
    ) -> Result<EncoderSide> {
        let flags = self.config.flags;
        let context = self.encode_context(tape, store, &ex.context, pass)?;
        let keys = self.refinement_keys(tape, &context)?;

        let use_s = flags.use_s && !ex.situation_ids.is_empty();
        let use_x = flags.use_x && !ex.post_ids.is_empty();
        let mut blocks: Vec<Vec<TokenId>> = Vec::new();
        if use_s {
            blocks.extend(ex.situation_ids.iter().cloned());
        }
        if use_x {
            blocks.extend(ex.post_ids.iter().cloned());
        }
        let mut situation = None;
        let mut post = None;
        if let Some(raw) = self.encode_blocks(tape, store, &blocks, pass)? {
            let ns = if use_s { ex.situation_ids.len() } else { 0 };
            if use_s {
                let rs = tape.slice_rows(raw, 0, ns)?;
                situation = Some(refine_blocks(tape, store, &self.situation_norm, rs, keys)?);
            }
            if use_x {
                let rx = tape.slice_rows(raw, ns, ex.post_ids.len())?;
                post = Some(refine_blocks(tape, store, &self.post_norm, rx, keys)?);
            }
        }

        let (strategy_logits, strategy_probs) = self.strategy.predict(tape, store, context.cls_state)?;
        let strategy_vector = if flags.use_g {
            Some(match (self.config.strategy_mode, gold) {
                (StrategyMode::Mixture, _) | (StrategyMode::GoldMixture, None) => self.strategy.mix(tape, store, strategy_probs)?,
                (StrategyMode::Single, _) => {
                    let k = argmax(tape.value(strategy_probs).data());
                    self.strategy.select(tape, store, StrategyId::ALL[k])?
                }
                (StrategyMode::GoldMixture, Some(g)) => self.strategy.select(tape, store, g)?,
            })
        } else {
            None
        };

        let factors = FactorSet {
            context: Some(context.states),
            situation: situation.map(|r| r.refined),
            post: post.map(|r| r.refined),
            strategy: strategy_vector,
        };
        Ok(EncoderSide {
            context,
            situation,
            post,
            strategy_logits,
            strategy_probs,
            strategy_vector,
            factors,
        })
    }

    /// Joint loss `L = L_r + L_g` over a batch (just `L_r` when the strategy
    /// factor is off). `L_r` averages over all response tokens in the batch.
    pub fn batch_loss(&self, tape: &mut Tape<S>, store: &ParamStore<S>, batch: &[EncodedExample], pass: &mut Pass<'_>) -> Result<BatchLoss> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let mut logits = Vec::with_capacity(batch.len());
        let mut targets = Vec::new();
        let mut strategy_rows = Vec::with_capacity(batch.len());
        let mut gold = Vec::with_capacity(batch.len());
        for ex in batch {
            let teacher = if pass.training { Some(ex.strategy) } else { None };
            let side = self.encode_side(tape, store, ex, teacher, pass)?;
            let out = self.decoder.forward(tape, store, &self.embeddings, &ex.decoder_input(), &side.factors, pass)?;
            logits.push(out.logits);
            targets.extend(ex.decoder_target().iter().map(|&t| t as usize));
            strategy_rows.push(side.strategy_logits);
            gold.push(ex.strategy.index());
        }
        let all_logits = tape.concat_rows(&logits)?;
        let response = tape.cross_entropy(all_logits, &targets, Some(PAD as usize))?;
        let strategy_logits: Vec<Vec<f64>> = strategy_rows.iter().map(|&v| tape.value(v).to_f64_vec()).collect();
        let response_loss = tape.value(response).data()[0].as_f64();
        let tokens = targets.iter().filter(|&&t| t != PAD as usize).count();
        if !self.config.flags.use_g {
            return Ok(BatchLoss {
                loss: response,
                response_loss,
                strategy_loss: None,
                tokens,
                strategy_logits,
            });
        }
        let all_strategy = tape.concat_rows(&strategy_rows)?;
        let strategy = tape.cross_entropy(all_strategy, &gold, None)?;
        let loss = tape.add(response, strategy)?;
        Ok(BatchLoss {
            loss,
            response_loss,
            strategy_loss: Some(tape.value(strategy).data()[0].as_f64()),
            tokens,
            strategy_logits,
        })
    }

    /// Autoregressive decoding until EOS or `config.max_length` tokens.
    pub fn generate(&self, store: &ParamStore<S>, ex: &EncodedExample, config: &GenerationConfig, rng: &mut SeededRng) -> Result<Generation> {
        config.validate()?;
        let mut tape = Tape::new();
        let mut pass = Pass::eval();
        let side = self.encode_side(&mut tape, store, ex, None, &mut pass)?;
        let strategy_logits = tape.value(side.strategy_logits).to_f64_vec();
        let limit = config.max_length.min(self.config.max_decoder_positions - 1);
        let mut prefix = vec![BOS];
        while prefix.len() <= limit {
            let out = self.decoder.forward(&mut tape, store, &self.embeddings, &prefix, &side.factors, &mut pass)?;
            let logits = tape.value(out.logits);
            let last = logits.row(logits.rows() - 1).to_vec();
            let next = sample_token(&last, config, &prefix[1..], rng)?;
            if next == EOS {
                break;
            }
            prefix.push(next);
        }
        prefix.remove(0);
        Ok(Generation {
            tokens: prefix,
            strategy_logits,
        })
    }

    /// Refinement attention weights and the strategy distribution for one example.
    pub fn attention_weights(&self, store: &ParamStore<S>, ex: &EncodedExample) -> Result<AttentionWeights> {
        let mut tape = Tape::new();
        let side = self.encode_side(&mut tape, store, ex, None, &mut Pass::eval())?;
        let rows = |r: Option<RefinedBlocks>, tape: &Tape<S>| -> Vec<Vec<f64>> {
            r.map(|r| {
                let w = tape.value(r.weights);
                (0..w.rows()).map(|i| w.row(i).iter().map(|x| x.as_f64()).collect()).collect()
            })
            .unwrap_or_default()
        };
        Ok(AttentionWeights {
            situation: rows(side.situation, &tape),
            post: rows(side.post, &tape),
            strategy_probs: tape.value(side.strategy_probs).to_f64_vec(),
        })
    }
}

/// Refinement weights per block (one row over context positions each).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub situation: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
    pub strategy_probs: Vec<f64>,
}
