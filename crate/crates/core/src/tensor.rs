//! Minimal dense row-major tensors over `f32` or `f64`.
//!
//! Everything the encoder needs is expressed through rank-1/rank-2 views with
//! fixed, deterministic loop orders, so results are reproducible bit-for-bit
//! across runs. The `f64` instantiation exists for gradient verification.

use num_traits::Float;
use thiserror::Error;

/// Scalar types the engine computes with.
pub trait Scalar: Float + std::fmt::Debug + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch for {name}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("non-finite value in {name}")]
    NonFinite { name: String },
}

/// Dense row-major tensor. Shape product always equals the data length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Rank-2 accessor; row-major.
    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> T {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn set2(&mut self, r: usize, c: usize, v: T) {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c] = v;
    }

    /// Row `r` of a rank-2 tensor.
    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Widens / narrows the scalar type through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64(Scalar::to_f64(v)))
                .collect(),
        }
    }
}

/// `out[m,n] = a[m,k] · b[k,n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, ka) = (a.shape()[0], a.shape()[1]);
    let (kb, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(ka, kb, "inner dimensions differ: {ka} vs {kb}");
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for p in 0..ka {
            let aip = a.at2(i, p);
            if aip == T::zero() {
                continue;
            }
            let brow = b.row(p);
            let orow = out.row_mut(i);
            for j in 0..n {
                orow[j] = orow[j] + aip * brow[j];
            }
        }
    }
    out
}

/// `out[m,n] = aᵀ[m,k] · b[k,n]` where `a` is stored as `[k,m]`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (k, m) = (a.shape()[0], a.shape()[1]);
    let (kb, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, kb, "inner dimensions differ: {k} vs {kb}");
    let mut out = Tensor::zeros(&[m, n]);
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &aip) in arow.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let orow = out.row_mut(i);
            for j in 0..n {
                orow[j] = orow[j] + aip * brow[j];
            }
        }
    }
    out
}

/// `out[m,n] = a[m,k] · bᵀ[k,n]` where `b` is stored as `[n,k]`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (n, kb) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, kb, "inner dimensions differ: {k} vs {kb}");
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = b.row(j);
            let mut acc = T::zero();
            for p in 0..k {
                acc = acc + arow[p] * brow[p];
            }
            *o = acc;
        }
    }
    out
}

/// Adds bias vector `b[n]` to every row of `x[m,n]` in place.
pub fn add_bias_rows<T: Scalar>(x: &mut Tensor<T>, b: &Tensor<T>) {
    let n = x.shape()[1];
    assert_eq!(b.len(), n, "bias length {} != columns {n}", b.len());
    let bias = b.data();
    for r in 0..x.shape()[0] {
        let row = x.row_mut(r);
        for j in 0..n {
            row[j] = row[j] + bias[j];
        }
    }
}

/// `a += b`, elementwise over identical shapes.
pub fn add_assign<T: Scalar>(a: &mut Tensor<T>, b: &Tensor<T>) {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in add_assign");
    for (x, y) in a.data.iter_mut().zip(b.data.iter()) {
        *x = *x + *y;
    }
}

/// `v = a · x` for `a[m,n]`, `x[n]` → `v[m]`.
pub fn matvec<T: Scalar>(a: &Tensor<T>, x: &[T]) -> Vec<T> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    assert_eq!(x.len(), n);
    let mut out = vec![T::zero(); m];
    for (i, o) in out.iter_mut().enumerate() {
        let row = a.row(i);
        let mut acc = T::zero();
        for j in 0..n {
            acc = acc + row[j] * x[j];
        }
        *o = acc;
    }
    out
}

/// `v = aᵀ · x` for `a[m,n]`, `x[m]` → `v[n]`.
pub fn matvec_t<T: Scalar>(a: &Tensor<T>, x: &[T]) -> Vec<T> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    assert_eq!(x.len(), m);
    let mut out = vec![T::zero(); n];
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        let row = a.row(i);
        for j in 0..n {
            out[j] = out[j] + xi * row[j];
        }
    }
    out
}
