use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-head token matrices for one text: query vectors on the query side,
/// key vectors on the passage side.
///
/// `data` is head-major: head `h`, token `t`, component `c` lives at
/// `(h * token_count + t) * dim + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiVectorEmbedding {
    head_count: usize,
    token_count: usize,
    dim: usize,
    data: Vec<f32>,
    pad_mask: Vec<bool>,
}

impl MultiVectorEmbedding {
    pub fn new(
        head_count: usize,
        token_count: usize,
        dim: usize,
        data: Vec<f32>,
        pad_mask: Vec<bool>,
    ) -> Result<Self> {
        if head_count == 0 || token_count == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "embedding shape must be positive, got {head_count}x{token_count}x{dim}"
            )));
        }
        let expected = head_count * token_count * dim;
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                name: "multi-vector embedding".into(),
                expected,
                found: data.len(),
            });
        }
        if pad_mask.len() != token_count {
            return Err(Error::DimensionMismatch {
                left: pad_mask.len(),
                right: token_count,
            });
        }
        if !pad_mask.iter().any(|&m| m) {
            return Err(Error::AllMasked);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("multi-vector embedding".into()));
        }
        Ok(Self {
            head_count,
            token_count,
            dim,
            data,
            pad_mask,
        })
    }

    /// Build a single-head embedding from token rows, all unmasked.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                left: bad.len(),
                right: dim,
            });
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(1, rows.len(), dim, data, vec![true; rows.len()])
    }

    pub fn head_count(&self) -> usize {
        self.head_count
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pad_mask(&self) -> &[bool] {
        &self.pad_mask
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn unmasked_count(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }

    pub fn head(&self, index: usize) -> Result<TokenMatrix<'_>> {
        if index >= self.head_count {
            return Err(Error::HeadOutOfRange {
                index,
                heads: self.head_count,
            });
        }
        let stride = self.token_count * self.dim;
        Ok(TokenMatrix {
            data: &self.data[index * stride..(index + 1) * stride],
            dim: self.dim,
            pad_mask: &self.pad_mask,
        })
    }
}

/// Borrowed single-head `token_count x dim` matrix with its padding mask.
#[derive(Debug, Clone, Copy)]
pub struct TokenMatrix<'a> {
    data: &'a [f32],
    dim: usize,
    pad_mask: &'a [bool],
}

impl<'a> TokenMatrix<'a> {
    pub fn new(data: &'a [f32], dim: usize, pad_mask: &'a [bool]) -> Result<Self> {
        if dim == 0 || data.len() != dim * pad_mask.len() {
            return Err(Error::SizeMismatch {
                name: "token matrix".into(),
                expected: dim * pad_mask.len(),
                found: data.len(),
            });
        }
        Ok(Self {
            data,
            dim,
            pad_mask,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token_count(&self) -> usize {
        self.pad_mask.len()
    }

    pub fn row(&self, t: usize) -> &'a [f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn is_real(&self, t: usize) -> bool {
        self.pad_mask[t]
    }

    /// Unmasked token rows.
    pub fn rows(&self) -> impl Iterator<Item = &'a [f32]> + '_ {
        let data = self.data;
        let dim = self.dim;
        self.pad_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(t, _)| &data[t * dim..(t + 1) * dim])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector {
    values: Vec<f32>,
}

impl DenseVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("dense vector must have positive dimension"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense vector".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }
}

/// Dot product with f64 accumulation.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] as f64 * b[j] as f64;
        acc[1] += a[j + 1] as f64 * b[j + 1] as f64;
        acc[2] += a[j + 2] as f64 * b[j + 2] as f64;
        acc[3] += a[j + 3] as f64 * b[j + 3] as f64;
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        sum += a[j] as f64 * b[j] as f64;
    }
    sum
}

/// Dot product of two f64 rows, same accumulation order as [`dot`].
#[inline]
pub(crate) fn dot_f64(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        sum += a[j] * b[j];
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            MultiVectorEmbedding::new(1, 2, 2, vec![0.0; 3], vec![true; 2]),
            Err(Error::SizeMismatch { .. })
        ));
        assert!(matches!(
            MultiVectorEmbedding::new(1, 2, 1, vec![0.0; 2], vec![false; 2]),
            Err(Error::AllMasked)
        ));
        assert!(matches!(
            MultiVectorEmbedding::new(1, 1, 1, vec![f32::NAN], vec![true]),
            Err(Error::NonFinite(_))
        ));
        assert!(DenseVector::new(vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn head_views() {
        let e = MultiVectorEmbedding::new(
            2,
            2,
            1,
            vec![1.0, 2.0, 3.0, 4.0],
            vec![true, false],
        )
        .unwrap();
        let h1 = e.head(1).unwrap();
        assert_eq!(h1.row(0), &[3.0]);
        assert_eq!(h1.rows().count(), 1);
        assert!(matches!(e.head(2), Err(Error::HeadOutOfRange { .. })));
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..11).map(|i| i as f32 * 0.5 - 2.0).collect();
        let b: Vec<f32> = (0..11).map(|i| 1.0 - i as f32 * 0.25).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
