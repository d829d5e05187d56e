//! Dense storage types and the arithmetic primitives every block is built on.
//!
//! Feature maps are [`Tensor`]s in batch, channel, height, width order.
//! Token sequences and weight matrices are row-major [`Matrix`] values.

mod counter;
mod kernels;
mod ops;
mod spec;

pub use counter::{count_ops, OpCount};
pub use ops::{
    avgpool_global, batchnorm, conv2d, gelu, gelu_matrix, gelu_scalar, linear, matmul, softmax_rows,
};
pub use spec::{BnSpec, ConvSpec};

pub(crate) use counter::record_macs as count_macs;
pub(crate) use kernels::gemm;
pub(crate) use ops::{batchnorm_rows_in_place, gelu_in_place, softmax_into};

use crate::error::{Error, Result};

/// Rank-4 feature map, `[batch, channels, height, width]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                axis: "data length",
                expected: numel,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Self { shape, data })
    }

    /// Caller guarantees the length; used by kernels whose output sizes are
    /// computed from validated shapes.
    pub(crate) fn from_parts(shape: [usize; 4], data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 4], value: f32) -> Self {
        Self::from_parts(shape, vec![value; shape.iter().product()])
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f32) -> Self {
        let [b, c, h, w] = shape;
        let mut data = Vec::with_capacity(b * c * h * w);
        for n in 0..b {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([n, ch, y, x]));
                    }
                }
            }
        }
        Self::from_parts(shape, data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, index: [usize; 4]) -> f32 {
        let [_, c, h, w] = self.shape;
        let [n, ch, y, x] = index;
        self.data[((n * c + ch) * h + y) * w + x]
    }

    /// One batch item as a `[channels, height * width]` slice.
    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * len..(n + 1) * len]
    }

    /// One batch item viewed as a channel-major matrix `[C, H*W]`.
    pub fn item_matrix(&self, n: usize) -> Matrix {
        Matrix::from_parts(
            self.shape[1],
            self.shape[2] * self.shape[3],
            self.item(n).to_vec(),
        )
    }

    /// Row-major `(H, W)` flattening of one item into tokens `[H*W, C]`.
    pub fn tokens(&self, n: usize) -> Matrix {
        self.item_matrix(n).transpose()
    }

    /// Inverse of [`Tensor::tokens`], stacking one token matrix per batch item.
    pub fn from_tokens(items: &[Matrix], height: usize, width: usize) -> Result<Self> {
        let Some(first) = items.first() else {
            return Err(Error::invalid("from_tokens", "no batch items"));
        };
        let c = first.cols();
        let mut data = Vec::with_capacity(items.len() * c * height * width);
        for m in items {
            ensure_dims("from_tokens", m, height * width, c)?;
            data.extend_from_slice(m.transpose().data());
        }
        Ok(Self::from_parts([items.len(), c, height, width], data))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self::from_parts(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, factor: f32) -> Self {
        self.map(|v| v * factor)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        same_shape("add", self.shape, other.shape)?;
        Ok(Self::from_parts(
            self.shape,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        same_shape("max_abs_diff", self.shape, other.shape)?;
        Ok(max_abs_diff(&self.data, &other.data))
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }
}

fn same_shape(op: &'static str, a: [usize; 4], b: [usize; 4]) -> Result<()> {
    const AXES: [&str; 4] = ["batch", "channels", "height", "width"];
    for i in 0..4 {
        crate::error::ensure_dim(op, AXES[i], a[i], b[i])?;
    }
    Ok(())
}

pub(crate) fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

/// Row-major 2-D matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "matrix",
                axis: "data length",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "matrix" });
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_parts(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_parts(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_parts(self.cols, self.rows, data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Matrix {
        Matrix::from_parts(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scale(&self, factor: f32) -> Matrix {
        self.map(|v| v * factor)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        ensure_dims("add", other, self.rows, self.cols)?;
        Ok(Matrix::from_parts(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    /// Columns `start..start + width` as a new matrix.
    pub fn column_slice(&self, start: usize, width: usize) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..start + width]);
        }
        Matrix::from_parts(self.rows, width, data)
    }

    /// Rows `start..start + count` as a new matrix.
    pub fn row_slice(&self, start: usize, count: usize) -> Matrix {
        Matrix::from_parts(
            count,
            self.cols,
            self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        )
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f32> {
        ensure_dims("max_abs_diff", other, self.rows, self.cols)?;
        Ok(max_abs_diff(&self.data, &other.data))
    }
}

pub(crate) fn ensure_dims(op: &'static str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    crate::error::ensure_dim(op, "rows", rows, m.rows())?;
    crate::error::ensure_dim(op, "cols", cols, m.cols())
}
