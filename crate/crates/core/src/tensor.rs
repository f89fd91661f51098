//! Dense row-major tensors and the scalar types they hold.
//!
//! Almost every model quantity is a matrix, so most helpers here treat a
//! tensor as `rows × cols`: a rank-1 tensor of length `n` is viewed as `1 × n`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn byte_width(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }
}

/// Floating-point element type. The model trains in `f32`; gradient checks
/// run the identical code instantiated at `f64`.
pub trait Scalar: Float + Default + fmt::Debug + fmt::Display + Send + Sync + 'static {
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one value from exactly `PRECISION.byte_width()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 4];
        b.copy_from_slice(bytes);
        f32::from_le_bytes(b)
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(bytes);
        f64::from_le_bytes(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.is_empty() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_rows(rows: &[&[S]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    left: vec![rows.len(), cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Tensor::new(shape, values.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn vector(data: Vec<S>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, S::one())
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows under the matrix view.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Number of columns under the matrix view.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> S {
        self.data.iter().fold(S::zero(), |a, &b| a + b)
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    /// Converts element type, used to run the double-precision check path.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| T::from_f64(x.as_f64())).collect(),
        }
    }

    /// In-place `self += other` for equal shapes.
    pub fn add_assign(&mut self, other: &Tensor<S>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<S>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = S::zero();
    for i in chunks * 8..a.len() {
        s = s + a[i] * b[i];
    }
    let lo = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let hi = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    lo + hi + s
}

#[inline]
pub(crate) fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// `a · b` for `a: p×q`, `b: q×r`.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (p, q) = (a.rows(), a.cols());
    let (q2, r) = (b.rows(), b.cols());
    if q != q2 || a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(shape_err("matmul", &a.shape, &b.shape));
    }
    let mut out = vec![S::zero(); p * r];
    for i in 0..p {
        let orow = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a.data[i * q + k];
            if aik != S::zero() {
                axpy(aik, &b.data[k * r..(k + 1) * r], orow);
            }
        }
    }
    Ok(Tensor {
        shape: vec![p, r],
        data: out,
    })
}

/// `a · bᵀ` for `a: p×q`, `b: r×q`.
pub fn matmul_nt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (p, q) = (a.rows(), a.cols());
    let (r, q2) = (b.rows(), b.cols());
    if q != q2 {
        return Err(shape_err("matmul_nt", &a.shape, &b.shape));
    }
    let mut out = vec![S::zero(); p * r];
    for i in 0..p {
        let arow = &a.data[i * q..(i + 1) * q];
        for j in 0..r {
            out[i * r + j] = dot(arow, &b.data[j * q..(j + 1) * q]);
        }
    }
    Ok(Tensor {
        shape: vec![p, r],
        data: out,
    })
}

/// `aᵀ · b` for `a: q×p`, `b: q×r`.
pub fn matmul_tn<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (q, p) = (a.rows(), a.cols());
    let (q2, r) = (b.rows(), b.cols());
    if q != q2 {
        return Err(shape_err("matmul_tn", &a.shape, &b.shape));
    }
    let mut out = vec![S::zero(); p * r];
    for k in 0..q {
        let brow = &b.data[k * r..(k + 1) * r];
        for i in 0..p {
            let aki = a.data[k * p + i];
            if aki != S::zero() {
                axpy(aki, brow, &mut out[i * r..(i + 1) * r]);
            }
        }
    }
    Ok(Tensor {
        shape: vec![p, r],
        data: out,
    })
}

/// Row-wise softmax with max subtraction. When `allowed` is given, masked-out
/// entries are exactly zero and excluded from the normalizer; a row must keep
/// at least one allowed entry.
pub fn softmax_rows<S: Scalar>(a: &Tensor<S>, allowed: Option<&dyn Fn(usize, usize) -> bool>) -> Tensor<S> {
    let (r, c) = (a.rows(), a.cols());
    let mut out = vec![S::zero(); r * c];
    for i in 0..r {
        let row = &a.data[i * c..(i + 1) * c];
        let orow = &mut out[i * c..(i + 1) * c];
        let ok = |j: usize| allowed.is_none_or(|f| f(i, j));
        let mut max = S::neg_infinity();
        for (j, &x) in row.iter().enumerate() {
            if ok(j) && x > max {
                max = x;
            }
        }
        let mut sum = S::zero();
        for (j, &x) in row.iter().enumerate() {
            if ok(j) {
                let e = (x - max).exp();
                orow[j] = e;
                sum = sum + e;
            }
        }
        let inv = S::one() / sum;
        for v in orow.iter_mut() {
            *v = *v * inv;
        }
    }
    Tensor {
        shape: a.shape.clone(),
        data: out,
    }
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax_row<S: Scalar>(row: &[S]) -> Vec<S> {
    let max = row.iter().fold(S::neg_infinity(), |m, &x| if x > m { x } else { m });
    let lse = row.iter().fold(S::zero(), |s, &x| s + (x - max).exp()).ln() + max;
    row.iter().map(|&x| x - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let a = t(&[&[1., 2.], &[3., 4.]]);
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
        let b = t(&[&[5., 6.], &[7., 8.]]);
        assert_eq!(matmul(&a, &b).unwrap(), t(&[&[19., 22.], &[43., 50.]]));
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[1, 3]);
        let b = Tensor::<f64>::zeros(&[2, 2]);
        match matmul(&a, &b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![1, 3]);
                assert_eq!(right, vec![2, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a = t(&[&[1., -2., 0.5], &[3., 4., -1.]]);
        let b = t(&[&[2., 1.], &[0., -1.], &[1., 3.]]);
        let ab = matmul(&a, &b).unwrap();
        assert_eq!(matmul_nt(&a, &b.transpose()).unwrap(), ab);
        assert_eq!(matmul_tn(&a.transpose(), &b).unwrap(), ab);
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_rows(&Tensor::<f64>::zeros(&[1, 8]), None);
        assert!(s.data().iter().all(|&v| v == 0.125));
        let s = softmax_rows(&t(&[&[0.0, 3f64.ln()]]), None);
        assert!((s.get(0, 0) - 0.25).abs() < 1e-12 && (s.get(0, 1) - 0.75).abs() < 1e-12);
        let s = softmax_rows(&t(&[&[1000.0, 0.0]]), None);
        assert!(s.is_finite());
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12 && s.get(0, 1) < 1e-300);
    }

    #[test]
    fn masked_softmax_zeroes_disallowed() {
        let s = softmax_rows(&t(&[&[1.0, 2.0, 3.0]]), Some(&|_, j| j != 2));
        assert_eq!(s.get(0, 2), 0.0);
        assert!((s.get(0, 0) + s.get(0, 1) - 1.0).abs() < 1e-12);
    }
}
