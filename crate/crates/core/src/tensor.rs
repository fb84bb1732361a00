//! Dense n-dimensional row-major tensor.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array, row-major. Images are H x W x C; flat vectors
/// are a single dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    dims: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(dims: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::config(format!("tensor dims must be positive, got {dims:?}")));
        }
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(Error::config(format!(
                "tensor data length {} does not match dims {:?} (expected {})",
                data.len(),
                dims,
                expect
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor { dims, data: vec![F::zero(); n] }
    }

    pub fn filled(dims: Vec<usize>, value: F) -> Self {
        let n = dims.iter().product();
        Tensor { dims, data: vec![value; n] }
    }

    pub fn from_vec(data: Vec<F>) -> Self {
        Tensor { dims: vec![data.len()], data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Reinterprets the buffer as a flat vector.
    pub fn flattened(&self) -> Tensor<F> {
        Tensor { dims: vec![self.data.len()], data: self.data.clone() }
    }

    /// Reinterprets the buffer under new dims of the same total length.
    pub fn reshaped(&self, dims: Vec<usize>) -> Result<Tensor<F>> {
        Tensor::new(dims, self.data.clone())
    }

    /// Index into an H x W x C tensor.
    #[inline]
    pub fn at3(&self, h: usize, w: usize, c: usize) -> F {
        let (wd, cd) = (self.dims[1], self.dims[2]);
        self.data[(h * wd + w) * cd + c]
    }

    #[inline]
    pub fn set3(&mut self, h: usize, w: usize, c: usize, v: F) {
        let (wd, cd) = (self.dims[1], self.dims[2]);
        self.data[(h * wd + w) * cd + c] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-type conversion (f32 <-> f64) through the f64 domain.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| G::of_f64(v.as_f64())).collect(),
        }
    }
}
