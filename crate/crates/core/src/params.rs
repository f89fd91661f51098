//! Registry of named trainable tensors.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// normal(0, 0.02)
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    /// Biases and LayerNorm parameters are excluded from weight decay.
    pub decay: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

pub const INIT_STD: f64 = 0.02;

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut impl Rng) -> ParamId {
        let value = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::Normal => {
                let normal = Normal::new(0.0, INIT_STD).expect("valid std");
                let n = shape.iter().product::<usize>();
                let data = (0..n).map(|_| S::from_f64(normal.sample(rng))).collect();
                Tensor::new(shape.to_vec(), data).expect("shape matches")
            }
        };
        self.insert(name, value, init == Init::Normal)
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>, decay: bool) -> ParamId {
        self.params.push(Param {
            name: name.to_string(),
            value,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    decay: p.decay,
                })
                .collect(),
        }
    }

    /// Overwrites values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        for p in &mut self.params {
            let id = other
                .find(&p.name)
                .ok_or_else(|| Error::schema(None, alloc::format!("missing parameter {}", p.name)))?;
            let src = &other.params[id.0].value;
            if src.shape() != p.value.shape() {
                return Err(Error::Shape {
                    op: "load_from",
                    left: p.value.shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            p.value = src.clone();
        }
        Ok(())
    }
}
