//! Tape-based reverse-mode automatic differentiation.
//!
//! Every forward operation appends a node holding its output value and the
//! ids of its inputs, so nodes are always in topological order. [`Tape::backward`]
//! walks the nodes once in reverse, accumulating exact gradients, and
//! reports them per parameter of the [`ParamStore`] used in the forward pass.
//!
//! A tape is single-use and single-writer: build one per forward/backward
//! step and drop it afterwards.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{self, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// tanh approximation
    Gelu,
}

enum Op<S> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Act(Var, Activation),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        a: Var,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<S>,
        count: usize,
    },
    Dropout {
        a: Var,
        mask: Vec<S>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    param_vars: Vec<Option<Var>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    half * x * (S::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + three * a * x * x)
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records a constant input. Constants receive gradients on the tape
    /// but never report them.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Places a parameter on the tape. Repeated calls for the same id
    /// return the same node, so gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_vars.get(id.index()) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        if self.param_vars.len() <= id.index() {
            self.param_vars.resize(id.index() + 1, None);
        }
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a length-`c` row vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let c = ta.cols();
        if tr.len() != c {
            return Err(shape_err("add_row", ta.shape(), tr.shape()));
        }
        let mut out = ta.clone();
        for chunk in out.data_mut().chunks_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(tr.data()) {
                *x = *x + b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let out = match act {
            Activation::Relu => self.value(a).map(|x| if x > S::zero() { x } else { S::zero() }),
            Activation::Gelu => self.value(a).map(gelu),
        };
        self.push(out, Op::Act(a, act))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Gelu)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = tensor::softmax_rows(self.value(a), None);
        self.push(out, Op::Softmax(a))
    }

    /// Softmax restricted to entries where `allowed(row, col)` holds; the
    /// rest are exactly zero. Every row needs at least one allowed entry.
    pub fn masked_softmax_rows(&mut self, a: Var, allowed: &dyn Fn(usize, usize) -> bool) -> Var {
        let out = tensor::softmax_rows(self.value(a), Some(allowed));
        self.push(out, Op::Softmax(a))
    }

    /// Per-row LayerNorm with the biased (1/d) variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let tx = self.value(x);
        let (r, d) = (tx.rows(), tx.cols());
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.len() != d || tb.len() != d {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        if d < 2 {
            return Err(Error::contract("layer_norm needs width >= 2"));
        }
        let dn = S::from_f64(d as f64);
        let mut xhat = Vec::with_capacity(r * d);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * d);
        for row in tx.data().chunks(d) {
            let mean = row.iter().fold(S::zero(), |a, &b| a + b) / dn;
            let var = row.iter().fold(S::zero(), |a, &b| a + (b - mean) * (b - mean)) / dn;
            let inv = S::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Gathers rows of `table` (`V×d`) for each id, giving `ids.len()×d`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = (tt.rows(), tt.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "embedding",
                    index: id,
                    bound: v,
                });
            }
            data.extend_from_slice(tt.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(out, Op::Embedding { table, ids: ids.to_vec() }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let d = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != d {
                return Err(shape_err("concat_rows", self.shape(*first), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, d], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.rows() || len == 0 {
            return Err(Error::Index {
                what: "slice_rows",
                index: start + len,
                bound: t.rows(),
            });
        }
        let d = t.cols();
        let data = t.data()[start * d..(start + len) * d].to_vec();
        let out = Tensor::new(vec![len, d], data)?;
        Ok(self.push(out, Op::SliceRows { a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let r = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != r {
                return Err(shape_err("concat_cols", self.shape(*first), t.shape()));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.cols() || len == 0 {
            return Err(Error::Index {
                what: "slice_cols",
                index: start + len,
                bound: t.cols(),
            });
        }
        let r = t.rows();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        Ok(self.push(out, Op::SliceCols { a, start }))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / S::from_f64(t.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Mean negative log-likelihood over rows of `logits` (`n×V`) whose
    /// target is not `ignore_index`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_index: Option<usize>) -> Result<Var> {
        let t = self.value(logits);
        let (n, v) = (t.rows(), t.cols());
        if targets.len() != n {
            return Err(shape_err("cross_entropy", t.shape(), &[targets.len()]));
        }
        let mut probs = Vec::with_capacity(n * v);
        let mut kept = Vec::with_capacity(n);
        let mut total = S::zero();
        let mut count = 0usize;
        for (i, &target) in targets.iter().enumerate() {
            let ls = tensor::log_softmax_row(t.row(i));
            probs.extend(ls.iter().map(|x| x.exp()));
            if Some(target) == ignore_index {
                kept.push(None);
                continue;
            }
            if target >= v {
                return Err(Error::Index {
                    what: "cross_entropy target",
                    index: target,
                    bound: v,
                });
            }
            total = total - ls[target];
            count += 1;
            kept.push(Some(target));
        }
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let loss = total / S::from_f64(count as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: kept,
                probs,
                count,
            },
        ))
    }

    /// Inverted dropout. With `p == 0` this returns `a` unchanged.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = S::from_f64(1.0 / (1.0 - p));
        let t = self.value(a);
        let mask: Vec<S> = (0..t.len())
            .map(|_| if rng.gen::<f64>() < p { S::zero() } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Dropout { a, mask })
    }

    /// Reverse pass from a scalar `loss`. Parameter values are not touched.
    pub fn backward(&self, loss: Var, store: &ParamStore<S>) -> Result<Gradients<S>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), S::one()));
        let mut out = Gradients::zeros_like(store);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.grads[id.index()].add_assign(&g),
                Op::MatMul(a, b) => {
                    let da = tensor::matmul_nt(&g, self.value(*b))?;
                    let db = tensor::matmul_tn(self.value(*a), &g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    let da = tensor::matmul(&g, self.value(*b))?;
                    let db = tensor::matmul_tn(&g, self.value(*a))?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let rshape = self.shape(*row).to_vec();
                    let c = g.cols();
                    let mut dr = vec![S::zero(); c];
                    for chunk in g.data().chunks(c) {
                        for (d, &x) in dr.iter_mut().zip(chunk) {
                            *d = *d + x;
                        }
                    }
                    accumulate(&mut grads, *row, Tensor::new(rshape, dr)?);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da = zip_map(&g, tb, |x, y| x * y);
                    let db = zip_map(&g, ta, |x, y| x * y);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, *a, g.map(|x| x * s));
                }
                Op::Act(a, act) => {
                    let ta = self.value(*a);
                    let da = match act {
                        Activation::Relu => zip_map(&g, ta, |x, y| if y > S::zero() { x } else { S::zero() }),
                        Activation::Gelu => zip_map(&g, ta, |x, y| x * gelu_grad(y)),
                    };
                    accumulate(&mut grads, *a, da);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut da = Vec::with_capacity(y.len());
                    for (yr, gr) in y.data().chunks(c).zip(g.data().chunks(c)) {
                        let s = tensor::dot(yr, gr);
                        da.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - s)));
                    }
                    accumulate(&mut grads, *a, Tensor::new(y.shape().to_vec(), da)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let tg = self.value(*gain);
                    let d = tg.len();
                    let dn = S::from_f64(d as f64);
                    let mut dgain = vec![S::zero(); d];
                    let mut dbias = vec![S::zero(); d];
                    let mut dx = Vec::with_capacity(g.len());
                    let mut dxhat = vec![S::zero(); d];
                    for (r, (gr, hr)) in g.data().chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut sum_dh = S::zero();
                        let mut sum_dh_h = S::zero();
                        for j in 0..d {
                            dgain[j] = dgain[j] + gr[j] * hr[j];
                            dbias[j] = dbias[j] + gr[j];
                            dxhat[j] = gr[j] * tg.data()[j];
                            sum_dh = sum_dh + dxhat[j];
                            sum_dh_h = sum_dh_h + dxhat[j] * hr[j];
                        }
                        let k = inv_std[r] / dn;
                        for j in 0..d {
                            dx.push(k * (dn * dxhat[j] - sum_dh - hr[j] * sum_dh_h));
                        }
                    }
                    let gshape = tg.shape().to_vec();
                    let bshape = self.shape(*bias).to_vec();
                    accumulate(&mut grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
                    accumulate(&mut grads, *gain, Tensor::new(gshape, dgain)?);
                    accumulate(&mut grads, *bias, Tensor::new(bshape, dbias)?);
                }
                Op::Embedding { table, ids } => {
                    let tt = self.value(*table);
                    let d = tt.cols();
                    let mut dt = Tensor::zeros(tt.shape());
                    for (i, &id) in ids.iter().enumerate() {
                        let src = g.row(i);
                        let dst = &mut dt.data_mut()[id * d..(id + 1) * d];
                        for (a, &b) in dst.iter_mut().zip(src) {
                            *a = *a + b;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::ConcatRows(parts) => {
                    let d = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.shape(p).to_vec();
                        let n = self.value(p).len();
                        let part = g.data()[offset..offset + n].to_vec();
                        offset += n;
                        debug_assert_eq!(n % d.max(1), 0);
                        accumulate(&mut grads, p, Tensor::new(shape, part)?);
                    }
                }
                Op::SliceRows { a, start } => {
                    let ta = self.value(*a);
                    let d = ta.cols();
                    let mut da = Tensor::zeros(ta.shape());
                    da.data_mut()[start * d..start * d + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let r = g.rows();
                    let total = g.cols();
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut part = Vec::with_capacity(r * w);
                        for i in 0..r {
                            part.extend_from_slice(&g.data()[i * total + col..i * total + col + w]);
                        }
                        col += w;
                        let shape = self.shape(p).to_vec();
                        accumulate(&mut grads, p, Tensor::new(shape, part)?);
                    }
                }
                Op::SliceCols { a, start } => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let w = g.cols();
                    let mut da = Tensor::zeros(ta.shape());
                    for i in 0..g.rows() {
                        da.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::Transpose(a) => {
                    let shape = self.shape(*a).to_vec();
                    let gt = g.transpose().reshape(shape)?;
                    accumulate(&mut grads, *a, gt);
                }
                Op::Reshape(a) => {
                    let shape = self.shape(*a).to_vec();
                    accumulate(&mut grads, *a, g.reshape(shape)?);
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    accumulate(&mut grads, *a, Tensor::full(self.shape(*a), s));
                }
                Op::Mean(a) => {
                    let n = S::from_f64(self.value(*a).len() as f64);
                    let s = g.data()[0] / n;
                    accumulate(&mut grads, *a, Tensor::full(self.shape(*a), s));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let scale = g.data()[0] / S::from_f64(*count as f64);
                    let v = self.value(*logits).cols();
                    let mut dl = vec![S::zero(); probs.len()];
                    for (i, target) in targets.iter().enumerate() {
                        let Some(t) = target else { continue };
                        for j in 0..v {
                            dl[i * v + j] = probs[i * v + j] * scale;
                        }
                        dl[i * v + t] = dl[i * v + t] - scale;
                    }
                    let shape = self.shape(*logits).to_vec();
                    accumulate(&mut grads, *logits, Tensor::new(shape, dl)?);
                }
                Op::Dropout { a, mask } => {
                    let data = g.data().iter().zip(mask).map(|(&x, &m)| x * m).collect();
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::new(shape, data)?);
                }
            }
        }
        Ok(out)
    }
}

fn zip_map<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(b.shape().to_vec(), data).expect("same shape")
}

fn accumulate<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Gradients for every parameter in a store; unused parameters get zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    grads: Vec<Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(store: &ParamStore<S>) -> Self {
        Gradients {
            grads: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.grads[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.grads[id.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.grads.iter()
    }

    pub fn global_norm(&self) -> f64 {
        let sum: f64 = self.grads
            .iter()
            .flat_map(|t| t.data())
            .map(|x| {
                let v = x.as_f64();
                v * v
            })
            .sum::<f64>();
        num_traits::Float::sqrt(sum)
    }

    pub fn scale(&mut self, s: S) {
        for t in &mut self.grads {
            for x in t.data_mut() {
                *x = *x * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}
