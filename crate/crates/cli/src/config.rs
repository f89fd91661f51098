//! Flat JSON run configuration: the training fields plus model sizes.

use serde::{Deserialize, Serialize};

use misc_core::model::encoder::EncoderConfig;
use misc_core::model::strategy_head::StrategyMode;
use misc_core::model::ModelConfig;
use misc_core::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_positions: usize,
    pub max_decoder_positions: usize,
    pub strategy_hidden: usize,
    pub strategy_mode: StrategyMode,
    pub refine_include_cls: bool,
    pub shared_factor_attention: bool,
    pub max_response_tokens: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        RunConfig {
            train: TrainConfig::default(),
            model_dim: m.encoder.model_dim,
            heads: m.encoder.heads,
            ffn_dim: m.encoder.ffn_dim,
            encoder_layers: m.encoder.layers,
            decoder_layers: m.decoder_layers,
            max_positions: m.encoder.max_positions,
            max_decoder_positions: m.max_decoder_positions,
            strategy_hidden: m.strategy_hidden,
            strategy_mode: m.strategy_mode,
            refine_include_cls: m.refine_include_cls,
            shared_factor_attention: m.shared_factor_attention,
            max_response_tokens: m.max_response_tokens,
        }
    }
}

impl RunConfig {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            encoder: EncoderConfig {
                layers: self.encoder_layers,
                heads: self.heads,
                model_dim: self.model_dim,
                ffn_dim: self.ffn_dim,
                max_positions: self.max_positions,
                dropout: self.train.dropout,
            },
            decoder_layers: self.decoder_layers,
            max_decoder_positions: self.max_decoder_positions,
            strategy_hidden: self.strategy_hidden,
            flags: self.train.flags(),
            strategy_mode: self.strategy_mode,
            refine_include_cls: self.refine_include_cls,
            shared_factor_attention: self.shared_factor_attention,
            max_response_tokens: self.max_response_tokens,
        }
    }
}
