//! Embedding vectors and their distance metric.
//!
//! A [`Descriptor`] stands in for the output of a cross-view matching
//! network: a fixed-length real vector whose L2 distance to another
//! descriptor measures image dissimilarity. The dimension is a runtime
//! parameter; production embeddings are 4096-dimensional while synthetic
//! worlds typically use 16 for speed. Descriptors are used raw, with no
//! normalization applied on input.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DescriptorError {
    #[error("descriptor dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("descriptor component at index {0} is not finite")]
    NotFinite(usize),
    #[error("descriptor must have at least one component")]
    Empty,
}

/// A fixed-dimension real vector in embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Descriptor {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Descriptor {
    type Error = DescriptorError;
    fn try_from(values: Vec<f64>) -> Result<Self, DescriptorError> {
        Descriptor::new(values)
    }
}

impl From<Descriptor> for Vec<f64> {
    fn from(d: Descriptor) -> Vec<f64> {
        d.values
    }
}

impl Descriptor {
    pub fn new(values: Vec<f64>) -> Result<Self, DescriptorError> {
        if values.is_empty() {
            return Err(DescriptorError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DescriptorError::NotFinite(i));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// L2 distance to another descriptor of the same dimension.
    pub fn l2_distance(&self, other: &Descriptor) -> Result<f64, DescriptorError> {
        if self.dim() != other.dim() {
            return Err(DescriptorError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(self.l2_distance_unchecked(other))
    }

    /// Same as [`l2_distance`](Self::l2_distance) but skips the dimension
    /// check; callers must have validated dimensions already.
    pub(crate) fn l2_distance_unchecked(&self, other: &Descriptor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// An ordered collection of descriptors with a uniform dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorSet {
    dimension: usize,
    items: Vec<Descriptor>,
}

impl DescriptorSet {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, items: Vec::new() }
    }

    pub fn push(&mut self, d: Descriptor) -> Result<(), DescriptorError> {
        if d.dim() != self.dimension {
            return Err(DescriptorError::DimensionMismatch {
                left: self.dimension,
                right: d.dim(),
            });
        }
        self.items.push(d);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Descriptor] {
        &self.items
    }

    pub fn into_items(self) -> Vec<Descriptor> {
        self.items
    }
}
