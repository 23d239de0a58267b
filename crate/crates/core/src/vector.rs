//! Embedding vectors and the dot-product / normalization primitives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A dense embedding of fixed dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![T::zero(); dim] }
    }

    pub fn from_f64(values: &[f64]) -> Self {
        Self { values: values.iter().map(|&v| T::from_f64_lossy(v)).collect() }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<T> {
        self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.widen()).collect()
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch { expected, actual: self.dim() });
        }
        Ok(())
    }

    /// Dot product with 64-bit accumulation.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        other.check_dim(self.dim())?;
        Ok(dot_slices(&self.values, &other.values))
    }

    pub fn norm(&self) -> f64 {
        dot_slices(&self.values, &self.values).sqrt()
    }

    /// Returns `self / |self|`; a zero (or non-finite) norm is an error.
    pub fn normalize(&self) -> Result<Self> {
        let norm = self.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(Self { values: self.values.iter().map(|&v| T::from_f64_lossy(v.widen() / norm)).collect() })
    }

    pub fn is_unit(&self, tolerance: f64) -> bool {
        (self.norm() - 1.0).abs() <= tolerance
    }

    /// Converts the element type, e.g. an `f32` store vector to `f64`.
    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector { values: self.values.iter().map(|v| U::from_f64_lossy(v.widen())).collect() }
    }
}

impl<T> AsRef<[T]> for EmbeddingVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

impl<T: Scalar> From<Vec<T>> for EmbeddingVector<T> {
    fn from(values: Vec<T>) -> Self {
        Self::new(values)
    }
}

/// `Σ aᵢbᵢ` accumulated in `f64`. Lengths must match.
#[inline]
pub fn dot_slices<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x.widen() * y.widen())
        .sum();
    for (x, y) in chunks_a.zip(chunks_b) {
        for i in 0..4 {
            acc[i] += x[i].widen() * y[i].widen();
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
