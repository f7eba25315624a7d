//! Dense `f64` tensors and reverse-mode differentiation.
//!
//! [`Tensor`] is a plain value type holding row-major data. Differentiable
//! computations are built on a [`Tape`]: each primitive records its inputs
//! and output, the forward value is computed eagerly at build time, and
//! [`Tape::backward`] sweeps the record once in reverse, accumulating
//! gradients additively across fan-out. [`adam::AdamState`] consumes the
//! resulting gradients; [`gradcheck`] provides the central-finite-difference
//! oracle the tests compare every primitive and every loss against.

pub mod adam;
pub mod gradcheck;
mod tape;

pub use adam::{adam_step, AdamState};
pub use tape::{Tape, Value, LOG_FLOOR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor. Every tensor in this crate is at most
/// two-dimensional; a scalar is `[1, 1]` and a row vector `[1, n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(default)]
    requires_grad: bool,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            requires_grad: false,
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(Error::shape(
                "from_values",
                format!("rank must be 1 or 2, got shape {shape:?}"),
            ));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "from_values",
                format!("zero-sized axis in shape {shape:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::shape(
                "from_values",
                format!("shape {shape:?} holds {n} elements, got {}", values.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            values,
            requires_grad: false,
        })
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            values: vec![x],
            requires_grad: false,
        }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            values,
            requires_grad: false,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::shape("from_rows", "no rows given"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            values.extend_from_slice(r);
        }
        Tensor::from_values(&[rows.len(), cols], values)
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Interprets the shape as `(rows, cols)`; rank-1 tensors are rows.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1]),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn element_count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols() + c]
    }

    /// Copies row `r` out of the tensor.
    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Largest absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_values_checks_element_count() {
        assert!(Tensor::from_values(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_values(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_values(&[2, 0], vec![]).is_err());
        assert!(Tensor::from_values(&[1, 2, 3], vec![0.0; 6]).is_err());
    }

    #[test]
    fn dims2_treats_rank_one_as_row() {
        let t = Tensor::from_values(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.dims2(), (1, 4));
        assert_eq!(t.row_slice(0), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn serde_round_trip_is_bit_exact() {
        let t = Tensor::from_values(&[2, 2], vec![0.1, -2.5e-17, 3.0, f64::MIN_POSITIVE])
            .unwrap()
            .with_requires_grad();
        let json = serde_json::to_string(&t).unwrap();
        let back: Tensor = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
        for (a, b) in t.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
