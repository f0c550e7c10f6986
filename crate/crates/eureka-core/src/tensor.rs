//! Dense row-major `f64` tensors.
//!
//! Tensors are plain value types: a shape and a flat data buffer. All
//! engine invariants (shape/data length agreement, finiteness) are checked
//! at construction; non-finite values anywhere are a hard error, never a
//! silent NaN propagating through an attribution score.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Errors raised by tensor construction and the autodiff engine.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, data has {found}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("index out of range in {op}: {detail}")]
    OutOfRange { op: &'static str, detail: String },
    #[error("log of a non-positive value")]
    LogDomain,
    #[error("finite-difference step must be positive and finite")]
    InvalidStep,
    #[error("{op} requires at least one counted element")]
    EmptyReduction { op: &'static str },
}

/// A dense tensor of 64-bit floats in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking the shape/data agreement and that every
    /// value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                expected,
                found: data.len(),
            });
        }
        let t = Tensor { shape, data };
        t.check_finite("Tensor::new")?;
        Ok(t)
    }

    /// Internal constructor for op outputs whose finiteness is checked by
    /// the tape once per node.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// A scalar tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(TensorError::NonScalarOutput {
                shape: self.shape.clone(),
            })
        }
    }

    /// Interprets the tensor as 2-D, returning `(rows, cols)`.
    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(TensorError::ShapeMismatch {
                op: "dims2",
                detail: alloc::format!("expected 2-D shape, got {other:?}"),
            }),
        }
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let (_, cols) = (self.shape[0], self.shape[1]);
        &self.data[r * cols..(r + 1) * cols]
    }

    pub(crate) fn check_finite(&self, context: &str) -> Result<(), TensorError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite {
                context: String::from(context),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_shape_agreement() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeDataMismatch { .. }));
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn new_rejects_non_finite() {
        let err = Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
        let err = Tensor::new(vec![1], vec![f64::INFINITY]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { .. }));
    }

    #[test]
    fn scalar_has_unit_shape() {
        let s = Tensor::scalar(3.5);
        assert_eq!(s.shape(), &[1]);
        assert_eq!(s.item().unwrap(), 3.5);
        assert!(Tensor::zeros(&[2, 2]).item().is_err());
    }
}
