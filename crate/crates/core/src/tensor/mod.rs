//! Dense double-precision tensors, a differentiation tape, Adam, and a
//! finite-difference gradient checker.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
mod params;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{sigmoid, Axis, Graph, Var, BCE_CLIP};
pub use params::{ParamId, ParamStore, Parameter};

pub(crate) use graph::{dot, matmul_raw, softmax_in_place};

use crate::error::{Error, Result};
use rand::Rng;

/// Row-major dense array. Ops treat rank-1 tensors as a single row.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![value; n])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Glorot/Xavier uniform over the first two dimensions.
    pub fn xavier_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self::from_raw(vec![rows, cols], data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)`, treating rank 0 and 1 as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [c] => (1, *c),
            [r, c] => (*r, *c),
            [rest @ .., c] => (rest.iter().product(), *c),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let c = self.dims2().1;
        self.data[row * c + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.dims2().1;
        &self.data[row * c..(row + 1) * c]
    }

    pub fn transposed(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_raw(vec![c, r], out)
    }
}
