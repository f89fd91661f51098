//! Parameterized building blocks shared by the encoder and decoder.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

pub const LN_EPS: f64 = 1e-5;

/// Per-pass state: dropout is active only when a random stream is present.
pub struct Pass<'r> {
    pub rng: Option<&'r mut SeededRng>,
    pub dropout: f64,
    pub training: bool,
}

impl<'r> Pass<'r> {
    pub fn eval() -> Self {
        Pass {
            rng: None,
            dropout: 0.0,
            training: false,
        }
    }

    pub fn train(rng: &'r mut SeededRng, dropout: f64) -> Self {
        Pass {
            rng: Some(rng),
            dropout,
            training: true,
        }
    }

    pub fn drop<S: Scalar>(&mut self, tape: &mut Tape<S>, v: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.dropout > 0.0 => tape.dropout(v, self.dropout, rng),
            _ => v,
        }
    }
}

/// `y = x·W + b` with `W: in×out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: store.add(&format!("{name}.weight"), &[input, output], Init::Normal, rng),
            bias: store.add(&format!("{name}.bias"), &[output], Init::Zeros, rng),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        Norm {
            gain: store.add(&format!("{name}.gain"), &[dim], Init::Ones, rng),
            bias: store.add(&format!("{name}.bias"), &[dim], Init::Zeros, rng),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, S::from_f64(LN_EPS))
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.gain, self.bias]
    }
}

/// Which query/key pairs may attend.
#[derive(Debug, Clone, Copy)]
pub enum Mask<'a> {
    Full,
    /// Query `i` sees keys `0..=i`.
    Causal,
    /// Query `i` sees key `j` iff both belong to the same segment.
    Segments(&'a [usize]),
}

impl Mask<'_> {
    fn allows(&self, i: usize, j: usize) -> bool {
        match self {
            Mask::Full => true,
            Mask::Causal => j <= i,
            Mask::Segments(seg) => seg[i] == seg[j],
        }
    }
}

/// Multi-head scaled dot-product attention with its own projections.
#[derive(Debug, Clone)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

/// Attention result plus the per-head weight matrices (`T_q × T_k`). The
/// segmented form does not materialize weights.
pub struct Attended {
    pub output: Var,
    pub weights: Vec<Var>,
}

impl Attention {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        Attention {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng),
            heads,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        queries: Var,
        memory: Var,
        mask: Mask<'_>,
    ) -> Result<Attended> {
        let d = tape.value(queries).cols();
        if tape.value(memory).cols() != d {
            return Err(Error::Shape {
                op: "attention",
                left: tape.shape(queries).to_vec(),
                right: tape.shape(memory).to_vec(),
            });
        }
        let dh = d / self.heads;
        let scale = S::one() / S::from_f64(dh as f64).sqrt();
        let q = self.query.forward(tape, store, queries)?;
        let k = self.key.forward(tape, store, memory)?;
        let v = self.value.forward(tape, store, memory)?;
        if let Mask::Segments(seg) = mask {
            let joined = self.segmented(tape, q, k, v, seg, dh, scale)?;
            let output = self.output.forward(tape, store, joined)?;
            return Ok(Attended { output, weights: Vec::new() });
        }
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let w = match mask {
                Mask::Full => tape.softmax_rows(scores),
                m => tape.masked_softmax_rows(scores, &|i, j| m.allows(i, j)),
            };
            outs.push(tape.matmul(w, vh)?);
            weights.push(w);
        }
        let joined = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let output = self.output.forward(tape, store, joined)?;
        Ok(Attended { output, weights })
    }

    /// Attention restricted to contiguous runs of equal segment ids, computed
    /// run by run so the cost grows with the run lengths, not the total.
    fn segmented<S: Scalar>(&self, tape: &mut Tape<S>, q: Var, k: Var, v: Var, seg: &[usize], dh: usize, scale: S) -> Result<Var> {
        let n = tape.value(q).rows();
        if seg.len() != n || tape.value(k).rows() != n {
            return Err(Error::contract("segment ids must cover every query and key"));
        }
        let mut runs = Vec::new();
        let mut start = 0;
        for i in 1..=n {
            if i == n || seg[i] != seg[start] {
                if seg[..start].contains(&seg[start]) {
                    return Err(Error::contract("segments must be contiguous"));
                }
                runs.push((start, i - start));
                start = i;
            }
        }
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let mut parts = Vec::with_capacity(runs.len());
            for &(s0, len) in &runs {
                let qs = tape.slice_rows(qh, s0, len)?;
                let ks = tape.slice_rows(kh, s0, len)?;
                let vs = tape.slice_rows(vh, s0, len)?;
                let scores = tape.matmul_nt(qs, ks)?;
                let scores = tape.scale(scores, scale);
                let w = tape.softmax_rows(scores);
                parts.push(tape.matmul(w, vs)?);
            }
            heads.push(if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts)? });
        }
        if heads.len() == 1 {
            Ok(heads[0])
        } else {
            tape.concat_cols(&heads)
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        [self.query, self.key, self.value, self.output].iter().flat_map(Linear::ids).collect()
    }
}

/// Position-wise `Linear → GELU → Linear`.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            inner: Linear::new(store, &format!("{name}.inner"), dim, hidden, rng),
            outer: Linear::new(store, &format!("{name}.outer"), hidden, dim, rng),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var, pass: &mut Pass<'_>) -> Result<Var> {
        let h = self.inner.forward(tape, store, x)?;
        let h = tape.gelu(h);
        let h = pass.drop(tape, h);
        self.outer.forward(tape, store, h)
    }
}
