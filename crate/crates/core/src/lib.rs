//! Core of a strategy-conditioned emotional-support dialogue model.
//!
//! The crate is `no_std` (with `alloc`) so that the numerical engine, the
//! model, training, and every evaluation metric stay free of IO. File
//! formats and the command line live in the companion `misc-cli` crate.
//!
//! Layout:
//!
//! * [`tensor`], [`tape`], [`params`], [`gradcheck`], [`checkpoint`]: a small
//!   dense-tensor engine with tape-based reverse-mode differentiation.
//! * [`vocab`], [`corpus`], [`commonsense`]: data model, preprocessing and
//!   the mental-state block provider.
//! * [`model`]: context/block encoder, strategy codebook, multi-factor decoder.
//! * [`sampling`], [`optim`], [`train`]: decoding, AdamW and the joint
//!   training loop.
//! * [`metrics`]: automatic evaluation and analysis.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod checkpoint;
pub mod commonsense;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod sampling;
pub mod strategy;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use strategy::StrategyId;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Precision, Scalar, Tensor};
