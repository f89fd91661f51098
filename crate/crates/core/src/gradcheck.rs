//! Finite-difference verification of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::Scalar;
use crate::tape::{Gradients, Tape, Var};

/// Gradients below this magnitude are compared absolutely rather than
/// relatively. With h = 1e-5 and an O(1) loss, central differences carry
/// roughly 1e-11 of roundoff, so a 1e-4 relative tolerance can only resolve
/// gradients of about this size.
pub const REL_FLOOR: f64 = 1e-5;

/// Moves a freshly initialised store to a generic point: decayed weights are
/// scaled by `weight_scale`, everything else gets N(0, `noise`) added. At the
/// 0.02-std init many gradients sit near 1e-7, where central differences
/// measure roundoff instead of the derivative.
pub fn spread_parameters<S: Scalar>(store: &mut ParamStore<S>, weight_scale: f64, noise: f64, rng: &mut impl Rng) {
    let normal = Normal::new(0.0, noise).expect("valid std");
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let decay = store.get(id).decay;
        for x in store.value_mut(id).data_mut() {
            let v = x.as_f64();
            *x = S::from_f64(if decay { v * weight_scale } else { v + normal.sample(rng) });
        }
    }
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Analytic and numeric values at the worst entry.
    pub worst: (f64, f64),
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// Settings for [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Entries sampled per parameter; tensors at most this large are checked exhaustively.
    pub samples_per_param: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            samples_per_param: 6,
        }
    }
}

fn eval<F>(store: &ParamStore<f64>, loss_fn: &F) -> Result<f64>
where
    F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    Ok(tape.value(loss).data()[0])
}

/// Computes tape gradients of `loss_fn` and compares them to central
/// differences `(f(θ+h) − f(θ−h)) / 2h`.
pub fn grad_check<F>(store: &ParamStore<f64>, loss_fn: F, config: GradCheckConfig, rng: &mut impl Rng) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    let analytic = tape.backward(loss, store)?;
    drop(tape);
    check_against(store, &loss_fn, &analytic, config, rng)
}

/// Compares externally supplied gradients against central differences.
/// Failures are reported, not raised.
pub fn check_against<F>(
    store: &ParamStore<f64>,
    loss_fn: &F,
    analytic: &Gradients<f64>,
    config: GradCheckConfig,
    rng: &mut impl Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let mut work = store.clone();
    let mut params = Vec::with_capacity(store.len());
    for id in store.ids() {
        let n = store.value(id).len();
        let entries: Vec<usize> = if n <= config.samples_per_param {
            (0..n).collect()
        } else {
            sample(rng, n, config.samples_per_param).into_vec()
        };
        let mut max_err: f64 = 0.0;
        let mut worst = (0.0, 0.0);
        for &i in &entries {
            let orig = store.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + config.step;
            let plus = eval(&work, loss_fn)?;
            work.value_mut(id).data_mut()[i] = orig - config.step;
            let minus = eval(&work, loss_fn)?;
            work.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * config.step);
            let a = analytic.get(id).data()[i];
            let err = relative_error(a, numeric);
            if err >= max_err {
                max_err = err;
                worst = (a, numeric);
            }
        }
        params.push(ParamCheck {
            name: store.get(id).name.clone(),
            checked: entries.len(),
            max_rel_error: max_err,
            worst,
            passed: max_err < config.tolerance,
        });
    }
    Ok(GradCheckReport {
        step: config.step,
        tolerance: config.tolerance,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_loss(store: &ParamStore<f64>, tape: &mut Tape<f64>) -> Result<Var> {
        let x = tape.leaf(Tensor::from_rows(&[&[0.3, -1.2, 0.7], &[1.0, 0.4, -0.5]])?);
        let w = tape.param(store, store.find("w").unwrap());
        let b = tape.param(store, store.find("b").unwrap());
        let y = tape.matmul(x, w)?;
        let y = tape.add_row(y, b)?;
        let sq = tape.mul(y, y)?;
        Ok(tape.sum(sq))
    }

    fn linear_store() -> ParamStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.add("w", &[3, 4], Init::Normal, &mut rng);
        store.insert("b", Tensor::vector(alloc::vec![0.1, -0.2, 0.3, 0.0]), false);
        store
    }

    #[test]
    fn linear_layer_passes() {
        let store = linear_store();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let report = grad_check(&store, linear_loss, GradCheckConfig::default(), &mut rng).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.params.len(), 2);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let store = linear_store();
        let mut tape = Tape::new();
        let loss = linear_loss(&store, &mut tape).unwrap();
        let mut grads = tape.backward(loss, &store).unwrap();
        grads.scale(1.01);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let report = check_against(&store, &linear_loss, &grads, GradCheckConfig::default(), &mut rng).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn zero_parameter_model_gives_empty_report() {
        let store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = grad_check(
            &store,
            |_, tape: &mut Tape<f64>| {
                let x = tape.leaf(Tensor::scalar(2.0));
                tape.mul(x, x)
            },
            GradCheckConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert!(report.params.is_empty());
        assert!(report.passed());
    }
}
