//! Minimal reverse-mode automatic differentiation engine.
//!
//! The engine provides exactly the primitives the model needs: dense f64
//! tensors of rank 1 or 2, a recording [`Tape`] with reverse-mode
//! [`Tape::backward`], row-wise sparsemax, 1-D convolution, Xavier
//! initialization, a finite-difference gradient checker, and an Adam
//! optimizer with per-group learning rates.
//!
//! Values are owned by [`Tensor`]; a computation is recorded by pushing
//! tensors onto a [`Tape`] (as trainable parameters or constants), which
//! hands back lightweight [`Var`] handles. All arithmetic is f64 so that
//! analytic gradients can be validated against central finite differences.

mod adam;
pub mod gradcheck;
mod init;
mod sparsemax;
mod tape;

pub use adam::Adam;
pub use init::xavier_init;
pub use sparsemax::{sparsemax_row, sparsemax_rows};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// A dense, row-major, 64-bit float tensor of rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {:?} implies {} values, got {}", shape, numel, data.len()),
            ));
        }
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::invalid(
                "tensor",
                format!("rank {} unsupported (1-D and 2-D only)", shape.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// A scalar, represented as a length-1 vector.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Build a matrix from rows; all rows must have equal length.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::invalid("tensor", "ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![n, d], data)
    }

    /// Identity matrix of size n.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Row count of a matrix.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a matrix.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        debug_assert!(self.is_matrix());
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert!(self.is_matrix());
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
