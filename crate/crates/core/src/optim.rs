//! AdamW, the warmup/decay learning-rate schedule, and global-norm clipping.

use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::Gradients;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with bias correction and decoupled weight decay. Moments are kept
/// in double precision regardless of the parameter type.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<S: Scalar>(config: AdamWConfig, store: &ParamStore<S>) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| alloc::vec![0.0; p.value.len()]).collect();
        AdamW {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`. A non-finite gradient leaves the
    /// parameters and the optimizer state untouched.
    pub fn step<S: Scalar>(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        if self.first.len() != store.len() {
            return Err(Error::contract("optimizer state does not match the parameter store"));
        }
        self.step += 1;
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let decay = store.get(id).decay;
            let g = grads.get(id).data();
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let w = store.value_mut(id).data_mut();
            for j in 0..w.len() {
                let gj = g[j].as_f64();
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                let mut x = w[j].as_f64();
                if decay {
                    x -= lr * weight_decay * x;
                }
                x -= lr * mhat / (Float::sqrt(vhat) + eps);
                w[j] = S::from_f64(x);
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `lr` over `warmup` steps, then linear decay to 0
/// at `total` (or flat at `lr` when `constant_after_warmup`).
pub fn lr_schedule(step: usize, lr: f64, warmup: usize, total: usize, constant_after_warmup: bool) -> f64 {
    if step < warmup {
        return lr * step as f64 / warmup as f64;
    }
    if constant_after_warmup {
        return lr;
    }
    if step >= total {
        return 0.0;
    }
    let span = (total - warmup) as f64;
    if span <= 0.0 {
        return 0.0;
    }
    lr * (total - step) as f64 / span
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut Gradients<S>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(S::from_f64(max_norm / norm));
    }
    norm
}
