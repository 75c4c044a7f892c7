//! Flat parameter vectors.
//!
//! Every model parameter set and every optimizer state (momentum,
//! second moment) lives in this shape. All arithmetic requires equal
//! lengths; the public entry points of the crate check lengths once and
//! convert violations into [`Error::DimensionMismatch`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flat vector of model parameters (or optimizer state of the same shape).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector<T>(Vec<T>);

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![T::zero(); len])
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> T) -> Self {
        ParamVector((0..len).map(f).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    /// Errors with `DimensionMismatch` unless `other` has the same length.
    pub fn check_same_len(&self, other: &Self) -> Result<()> {
        if self.len() == other.len() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            })
        }
    }

    /// True iff every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: T, x: &Self) {
        debug_assert_eq!(self.len(), x.len());
        for (s, &v) in self.0.iter_mut().zip(x.0.iter()) {
            *s += a * v;
        }
    }

    /// `self = b * self + a * x` (exponential-moving-average update).
    pub fn scale_axpy(&mut self, b: T, a: T, x: &Self) {
        debug_assert_eq!(self.len(), x.len());
        for (s, &v) in self.0.iter_mut().zip(x.0.iter()) {
            *s = b * *s + a * v;
        }
    }

    pub fn add_assign(&mut self, x: &Self) {
        debug_assert_eq!(self.len(), x.len());
        for (s, &v) in self.0.iter_mut().zip(x.0.iter()) {
            *s += v;
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        ParamVector(self.0.iter().map(|&v| a * v).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.len(), other.len());
        ParamVector(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(&a, &b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.len(), other.len());
        ParamVector(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(&a, &b)| a - b)
                .collect(),
        )
    }

    pub fn dot(&self, other: &Self) -> T {
        debug_assert_eq!(self.len(), other.len());
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(&a, &b)| a * b)
            .sum()
    }

    /// Euclidean norm.
    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    /// Max-absolute-value norm.
    pub fn norm_inf(&self) -> T {
        self.0
            .iter()
            .fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// Elementwise map.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        ParamVector(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise binary combination.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.len(), other.len());
        ParamVector(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// Largest absolute componentwise difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        debug_assert_eq!(self.len(), other.len());
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    /// Weighted sum `Σ wᵢ · vᵢ`, accumulated in the order given.
    ///
    /// The reduction order is part of the determinism contract: callers
    /// pass terms in ascending client id so results do not depend on
    /// worker scheduling.
    pub fn weighted_sum(terms: &[(T, &Self)]) -> Result<Self> {
        let first = terms.first().ok_or(Error::EmptyReportSet)?;
        let len = first.1.len();
        let mut acc = ParamVector::zeros(len);
        for (w, v) in terms {
            acc.check_same_len(v)?;
            acc.axpy(*w, v);
        }
        Ok(acc)
    }
}

impl<T: Scalar> std::ops::Index<usize> for ParamVector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T: Scalar> std::ops::IndexMut<usize> for ParamVector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T: Scalar> From<Vec<T>> for ParamVector<T> {
    fn from(values: Vec<T>) -> Self {
        ParamVector(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axpy_and_norms() {
        let mut a = ParamVector::new(vec![1.0_f64, 2.0]);
        let b = ParamVector::new(vec![3.0, -1.0]);
        a.axpy(2.0, &b);
        assert_eq!(a.as_slice(), &[7.0, 0.0]);
        assert_eq!(a.norm(), 7.0);
        assert_eq!(a.norm_inf(), 7.0);
    }

    #[test]
    fn weighted_sum_is_ordered_fold() {
        let v1 = ParamVector::new(vec![0.0_f64, 0.0]);
        let v2 = ParamVector::new(vec![4.0, 4.0]);
        let s = ParamVector::weighted_sum(&[(0.25, &v1), (0.75, &v2)]).unwrap();
        assert_eq!(s.as_slice(), &[3.0, 3.0]);
    }

    #[test]
    fn weighted_sum_empty_errors() {
        let terms: Vec<(f64, &ParamVector<f64>)> = vec![];
        assert!(matches!(
            ParamVector::weighted_sum(&terms),
            Err(Error::EmptyReportSet)
        ));
    }

    #[test]
    fn length_check() {
        let a = ParamVector::<f64>::zeros(2);
        let b = ParamVector::<f64>::zeros(3);
        assert!(matches!(
            a.check_same_len(&b),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 3
            })
        ));
    }

    #[test]
    fn works_in_f32() {
        let mut a = ParamVector::new(vec![1.0_f32, 2.0]);
        a.scale_axpy(0.5, 0.5, &ParamVector::new(vec![3.0, 4.0]));
        assert_eq!(a.as_slice(), &[2.0_f32, 3.0]);
    }
}
