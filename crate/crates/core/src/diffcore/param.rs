use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A trainable tensor with its gradient accumulator and Adam moment buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    name: String,
    values: Matrix,
    grad: Matrix,
    adam_m: Matrix,
    adam_v: Matrix,
    step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, values: Matrix) -> Self {
        let (r, c) = values.shape();
        Self {
            name: name.into(),
            values,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    /// Rebuilds a parameter from stored state (checkpoint loading).
    pub fn from_parts(
        name: impl Into<String>,
        values: Matrix,
        adam_m: Matrix,
        adam_v: Matrix,
        step_count: u64,
    ) -> Result<Self> {
        if adam_m.shape() != values.shape() || adam_v.shape() != values.shape() {
            return Err(Error::Input("moment buffers must match value shape".into()));
        }
        let (r, c) = values.shape();
        Ok(Self {
            name: name.into(),
            values,
            grad: Matrix::zeros(r, c),
            adam_m,
            adam_v,
            step_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Direct write access for re-projection (anchor normalization) and finite differences.
    pub fn values_mut(&mut self) -> &mut Matrix {
        &mut self.values
    }

    pub fn grad(&self) -> &Matrix {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut Matrix {
        &mut self.grad
    }

    pub fn adam_m(&self) -> &Matrix {
        &self.adam_m
    }

    pub fn adam_v(&self) -> &Matrix {
        &self.adam_v
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Adds `g` into the gradient accumulator.
    pub fn accumulate(&mut self, g: &Matrix) {
        self.grad.add_assign(g);
    }

    /// Appends rows to values; gradient and moment buffers grow with zero rows.
    pub fn append_rows(&mut self, rows: &Matrix) -> Result<()> {
        if self.values.rows() > 0 && rows.rows() > 0 && rows.cols() != self.values.cols() {
            return Err(Error::Input(format!(
                "`{}`: appended rows have {} columns, expected {}",
                self.name,
                rows.cols(),
                self.values.cols()
            )));
        }
        let zeros = Matrix::zeros(rows.rows(), rows.cols());
        self.values = self.values.vstack(rows)?;
        self.grad = self.grad.vstack(&zeros)?;
        self.adam_m = self.adam_m.vstack(&zeros)?;
        self.adam_v = self.adam_v.vstack(&zeros)?;
        Ok(())
    }

    pub(crate) fn adam_parts(&mut self) -> (&mut Matrix, &Matrix, &mut Matrix, &mut Matrix, &mut u64) {
        (
            &mut self.values,
            &self.grad,
            &mut self.adam_m,
            &mut self.adam_v,
            &mut self.step_count,
        )
    }
}

/// Anything that owns an ordered set of parameters.
pub trait Parameterized {
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

impl Parameterized for Parameter {
    fn params(&self) -> Vec<&Parameter> {
        vec![self]
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![self]
    }
}
