use crate::error::{Error, Result};
use crate::spec::NormKind;

/// A finite vector in binary32 precision; the object every operator compresses.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseVector {
    values: Vec<f32>,
}

impl DenseVector {
    /// Rejects NaN and infinite entries.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value {} at index {i}",
                values[i]
            )));
        }
        Ok(Self { values })
    }

    /// Rounds each entry to the nearest binary32 value.
    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            values: vec![0.0; d],
        }
    }

    /// Caller guarantees finiteness (used on operator outputs).
    pub(crate) fn from_trusted(values: Vec<f32>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// p-norm accumulated in binary64.
    pub fn norm(&self, p: NormKind) -> f64 {
        match p {
            NormKind::L1 => self.values.iter().map(|v| (*v as f64).abs()).sum(),
            NormKind::L2 => self.norm_sq().sqrt(),
            NormKind::Inf => self
                .values
                .iter()
                .map(|v| (*v as f64).abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| (*v as f64) * (*v as f64)).sum()
    }

    /// `‖self − other‖²` in binary64.
    pub fn dist_sq(&self, other: &DenseVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let t = *a as f64 - *b as f64;
                t * t
            })
            .sum()
    }
}
