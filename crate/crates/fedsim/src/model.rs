//! Dense parameter vectors.
//!
//! Every model, gradient and update direction in the simulator is a
//! [`ModelVector`]: a fixed-length vector of f64 entries. The dimension is
//! set by the problem and identical across devices.

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

/// A d-dimensional parameter (or gradient) vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(pub Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ModelVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Checks the dimension against an expected value.
    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(FedError::DimensionMismatch {
                expected,
                got: self.dim(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &ModelVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: f64, other: &ModelVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.0 {
            *a *= alpha;
        }
    }

    pub fn sub(&self, other: &ModelVector) -> ModelVector {
        ModelVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn add(&self, other: &ModelVector) -> ModelVector {
        ModelVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn scaled(&self, alpha: f64) -> ModelVector {
        ModelVector(self.0.iter().map(|a| a * alpha).collect())
    }

    pub fn dist_sq(&self, other: &ModelVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl std::ops::Index<usize> for ModelVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for ModelVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Weighted mean of vectors: sum_j weights[j] * vectors[j].
pub fn weighted_sum(vectors: &[ModelVector], weights: &[f64]) -> ModelVector {
    debug_assert_eq!(vectors.len(), weights.len());
    let dim = vectors.first().map_or(0, ModelVector::dim);
    let mut out = ModelVector::zeros(dim);
    for (v, &q) in vectors.iter().zip(weights) {
        out.axpy(q, v);
    }
    out
}

/// Plain mean of a non-empty multiset of vectors.
pub fn mean(vectors: &[&ModelVector]) -> ModelVector {
    debug_assert!(!vectors.is_empty());
    let dim = vectors[0].dim();
    let mut out = ModelVector::zeros(dim);
    for v in vectors {
        out.axpy(1.0, v);
    }
    out.scale(1.0 / vectors.len() as f64);
    out
}
