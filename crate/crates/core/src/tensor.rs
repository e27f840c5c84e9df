//! Dense row-major tensors over `f64`.
//!
//! Everything in this crate — embeddings, LSTM weights, CRF tables,
//! gradients — is stored as a [`Tensor`]. Shapes are kept small (scalars,
//! vectors, matrices); there is no broadcasting machinery here beyond what
//! the tape primitives define for themselves.

use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;

/// A dense tensor: a shape and a row-major `f64` buffer.
///
/// Invariant: `shape.iter().product() == data.len()`. Constructors enforce
/// it; deserialized tensors are re-checked by [`Tensor::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and matching data buffer.
    ///
    /// Panics if the element count does not match the shape product; this is
    /// a programming error, not an input error.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor shape {:?} implies {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    /// Builds a `rows x cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// (rows, cols) of a matrix.
    pub fn dims2(&self) -> (usize, usize) {
        assert!(self.is_matrix(), "dims2() on tensor of shape {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    /// Row `r` of a matrix as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        let (rows, cols) = self.dims2();
        assert!(r < rows, "row {} out of range for {} rows", r, rows);
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let (rows, cols) = self.dims2();
        assert!(r < rows, "row {} out of range for {} rows", r, rows);
        &mut self.data[r * cols..(r + 1) * cols]
    }

    /// Matrix element accessor.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        let (_, cols) = self.dims2();
        self.data[r * cols + c]
    }

    /// True when every entry is finite (no NaN, no infinities).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Validity check: shape/data agreement and finiteness.
    pub fn validate(&self, context: &str) -> Result<(), AutodiffError> {
        let numel: usize = self.shape.iter().product();
        if numel != self.data.len() {
            return Err(AutodiffError::InvalidShape {
                op: "validate",
                shape: self.shape.clone(),
                reason: format!("{} elements stored in {}", self.data.len(), context),
            });
        }
        if !self.all_finite() {
            return Err(AutodiffError::NonFinite { context: context.to_string() });
        }
        Ok(())
    }

    /// Euclidean norm of the flattened data.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// In-place `self += other` (shapes must match).
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    /// In-place `self *= c`.
    pub fn scale_assign(&mut self, c: f64) {
        for a in self.data.iter_mut() {
            *a *= c;
        }
    }
}
