use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Origin of a token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Text,
    ImageContent,
    ImageStyle,
    Integrated,
}

/// `T×D` token sequence injected through cross-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptFeature {
    tokens: Array2<f32>,
    source: FeatureSource,
}

impl PromptFeature {
    pub fn new(tokens: Array2<f32>, source: FeatureSource) -> Result<Self> {
        if tokens.nrows() == 0 || tokens.ncols() == 0 {
            return Err(Error::invalid("prompt feature needs at least one token and one column"));
        }
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                context: "prompt feature".into(),
                detail: "non-finite token value".into(),
            });
        }
        Ok(Self { tokens, source })
    }

    pub fn zeros(len: usize, dim: usize, source: FeatureSource) -> Self {
        Self {
            tokens: Array2::zeros((len.max(1), dim.max(1))),
            source,
        }
    }

    pub fn from_flat(values: &[f32], len: usize, dim: usize, source: FeatureSource) -> Result<Self> {
        if values.len() != len * dim {
            return Err(Error::invalid(format!(
                "{} values cannot fill {len}x{dim} tokens",
                values.len()
            )));
        }
        let tokens = Array2::from_shape_vec((len, dim), values.to_vec())
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(tokens, source)
    }

    /// Number of tokens `T`.
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token width `D`.
    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tokens.dim()
    }

    pub fn tokens(&self) -> &Array2<f32> {
        &self.tokens
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }

    pub fn with_source(mut self, source: FeatureSource) -> Self {
        self.source = source;
        self
    }

    /// Row-major flattening.
    pub fn flatten(&self) -> Vec<f32> {
        self.tokens.iter().copied().collect()
    }

    pub fn check_shape(&self, other: &PromptFeature) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "feature shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f32) -> Result<PromptFeature> {
        Self::new(&self.tokens * k, self.source)
    }

    /// Cosine similarity of the flattened sequences; 0 when either is zero.
    pub fn cosine(&self, other: &PromptFeature) -> Result<f64> {
        self.check_shape(other)?;
        let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (a, b) in self.tokens.iter().zip(other.tokens.iter()) {
            dot += *a as f64 * *b as f64;
            na += (*a as f64).powi(2);
            nb += (*b as f64).powi(2);
        }
        if na == 0.0 || nb == 0.0 {
            return Ok(0.0);
        }
        Ok(dot / (na.sqrt() * nb.sqrt()))
    }

    pub fn nested(&self) -> Vec<Vec<f32>> {
        self.tokens.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    pub fn from_nested(rows: &[Vec<f32>], source: FeatureSource) -> Result<Self> {
        let len = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("ragged token rows"));
        }
        let flat: Vec<f32> = rows.iter().flatten().copied().collect();
        Self::from_flat(&flat, len, dim, source)
    }
}

/// `a + b − c`, elementwise.
pub fn add_sub(a: &PromptFeature, b: &PromptFeature, c: &PromptFeature, source: FeatureSource) -> Result<PromptFeature> {
    a.check_shape(b)?;
    a.check_shape(c)?;
    PromptFeature::new(&(a.tokens() + b.tokens()) - c.tokens(), source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_nan_and_flattens_row_major() {
        assert!(PromptFeature::new(array![[f32::NAN]], FeatureSource::Text).is_err());
        let f = PromptFeature::new(array![[1.0, 2.0], [3.0, 4.0]], FeatureSource::Text).unwrap();
        assert_eq!(f.flatten(), vec![1.0, 2.0, 3.0, 4.0]);
        let back = PromptFeature::from_nested(&f.nested(), FeatureSource::Text).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn cosine_basics() {
        let a = PromptFeature::new(array![[1.0, 0.0]], FeatureSource::Text).unwrap();
        let b = PromptFeature::new(array![[0.0, 2.0]], FeatureSource::Text).unwrap();
        assert_eq!(a.cosine(&b).unwrap(), 0.0);
        assert!((a.cosine(&a.scaled(3.0).unwrap()).unwrap() - 1.0).abs() < 1e-12);
    }
}
