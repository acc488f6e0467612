//! Dense row-major `f64` tensors and the matrix kernels shared by the
//! autograd tape, the bound propagators and the LP encoder.

use serde::{Deserialize, Serialize};

use crate::par;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting length mismatches and non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let t = Self::from_parts(shape, data)?;
        t.check_finite("tensor construction")?;
        Ok(t)
    }

    /// Builds a tensor checking only the shape. Used for intermediate values
    /// whose finiteness is checked by the caller.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} values, data has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// A `[1, n]` row matrix.
    pub fn row(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![1, data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D view: the leading extent, with all trailing extents
    /// flattened into columns.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{what} (flat index {i}, value {})",
                self.data[i]
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Dot product with a fixed four-way accumulation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[b, j] = a[b, :] . w[j, :]` for `a: [rows, inner]`, `w: [out_cols, inner]`.
pub fn matmul_bt(a: &[f64], rows: usize, inner: usize, w: &[f64], out_cols: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(w.len(), out_cols * inner);
    let mut out = vec![0.0; rows * out_cols];
    par::for_each_chunk_mut(&mut out, out_cols, |b, orow| {
        let arow = &a[b * inner..(b + 1) * inner];
        for (j, o) in orow.iter_mut().enumerate() {
            *o = dot(arow, &w[j * inner..(j + 1) * inner]);
        }
    });
    out
}

/// `out[b, :] = sum_j g[b, j] * w[j, :]` for `g: [rows, mid]`, `w: [mid, cols]`.
pub fn matmul(g: &[f64], rows: usize, mid: usize, w: &[f64], cols: usize) -> Vec<f64> {
    debug_assert_eq!(g.len(), rows * mid);
    debug_assert_eq!(w.len(), mid * cols);
    let mut out = vec![0.0; rows * cols];
    par::for_each_chunk_mut(&mut out, cols, |b, orow| {
        let grow = &g[b * mid..(b + 1) * mid];
        for (j, &gj) in grow.iter().enumerate() {
            if gj != 0.0 {
                axpy(gj, &w[j * cols..(j + 1) * cols], orow);
            }
        }
    });
    out
}

/// `out[j, :] = sum_b g[b, j] * a[b, :]`, i.e. `g^T a` for `g: [rows, out_rows]`,
/// `a: [rows, cols]`.
pub fn matmul_at(g: &[f64], rows: usize, out_rows: usize, a: &[f64], cols: usize) -> Vec<f64> {
    debug_assert_eq!(g.len(), rows * out_rows);
    debug_assert_eq!(a.len(), rows * cols);
    let mut out = vec![0.0; out_rows * cols];
    par::for_each_chunk_mut(&mut out, cols, |j, orow| {
        for b in 0..rows {
            let gbj = g[b * out_rows + j];
            if gbj != 0.0 {
                axpy(gbj, &a[b * cols..(b + 1) * cols], orow);
            }
        }
    });
    out
}
