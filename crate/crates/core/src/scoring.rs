//! Retrieval scoring: late-interaction sum-of-max over one attention head,
//! mean-pooled layer-normalized dense vectors, and softmax retrieval
//! distributions.

use serde::{Deserialize, Serialize};

use crate::distribution::Distribution;
use crate::embedding::{dot, dot_f64, DenseVector, MultiVectorEmbedding, TokenMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_HEAD_INDEX: usize = 6;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Passage ids with their scores, in a fixed order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreList {
    ids: Vec<String>,
    scores: Vec<f64>,
}

impl ScoreList {
    pub fn new(ids: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::DimensionMismatch {
                left: ids.len(),
                right: scores.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("score list".into()));
        }
        Ok(Self { ids, scores })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let (ids, scores) = pairs.into_iter().unzip();
        Self::new(ids, scores)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.ids.iter().map(String::as_str).zip(self.scores.iter().copied())
    }

    pub fn truncate(&mut self, k: usize) {
        self.ids.truncate(k);
        self.scores.truncate(k);
    }
}

/// A query head converted once to f64 rows, reused across many passages.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    dim: usize,
    rows: Vec<f64>,
    head_index: usize,
}

impl PreparedQuery {
    pub fn new(query: &MultiVectorEmbedding, head_index: usize) -> Result<Self> {
        let head = query.head(head_index)?;
        let rows: Vec<f64> = head.rows().flatten().map(|&v| v as f64).collect();
        if rows.is_empty() {
            return Err(Error::AllMasked);
        }
        Ok(Self {
            dim: query.dim(),
            rows,
            head_index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token_count(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn head_index(&self) -> usize {
        self.head_index
    }

    pub(crate) fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.dim)
    }

    /// Sum over query tokens of the best dot product against the passage's
    /// unmasked tokens.
    pub fn score(&self, passage: &MultiVectorEmbedding) -> Result<f64> {
        let head = passage.head(self.head_index)?;
        self.score_head(head)
    }

    pub fn score_head(&self, head: TokenMatrix<'_>) -> Result<f64> {
        if head.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: head.dim(),
            });
        }
        let mut best = vec![f64::NEG_INFINITY; self.token_count()];
        let mut buf = vec![0f64; self.dim];
        let mut any = false;
        for row in head.rows() {
            any = true;
            for (b, &v) in buf.iter_mut().zip(row) {
                *b = v as f64;
            }
            for (m, q) in best.iter_mut().zip(self.rows()) {
                let s = dot_f64(q, &buf);
                if s > *m {
                    *m = s;
                }
            }
        }
        if !any {
            return Err(Error::AllMasked);
        }
        Ok(best.iter().sum())
    }
}

/// Late-interaction score of `passage` for `query` using head `head_index`.
///
/// Masked query tokens are left out of the sum and masked passage tokens out
/// of the max.
pub fn multi_vector_score(
    query: &MultiVectorEmbedding,
    passage: &MultiVectorEmbedding,
    head_index: usize,
) -> Result<f64> {
    if query.dim() != passage.dim() {
        return Err(Error::DimensionMismatch {
            left: query.dim(),
            right: passage.dim(),
        });
    }
    PreparedQuery::new(query, head_index)?.score(passage)
}

/// Mean-pool the unmasked rows, then layer-normalize without affine
/// parameters: `(x - mean) / (std + eps)` with the population std.
pub fn dense_embed(tokens: TokenMatrix<'_>) -> Result<DenseVector> {
    let dim = tokens.dim();
    let mut mean = vec![0f64; dim];
    let mut n = 0usize;
    for row in tokens.rows() {
        n += 1;
        for (m, &v) in mean.iter_mut().zip(row) {
            if !v.is_finite() {
                return Err(Error::NonFinite("token matrix".into()));
            }
            *m += v as f64;
        }
    }
    if n == 0 {
        return Err(Error::AllMasked);
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    DenseVector::new(layer_norm(&mean))
}

fn layer_norm(x: &[f64]) -> Vec<f32> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let denom = var.sqrt() + LAYER_NORM_EPS;
    x.iter().map(|v| ((v - mu) / denom) as f32).collect()
}

pub fn dense_score(q: &DenseVector, d: &DenseVector) -> Result<f64> {
    if q.dim() != d.dim() {
        return Err(Error::DimensionMismatch {
            left: q.dim(),
            right: d.dim(),
        });
    }
    Ok(dot(q.values(), d.values()))
}

/// Softmax of `scores / temperature`, stabilized by subtracting the max.
pub fn retrieval_distribution(scores: &ScoreList, temperature: f64) -> Result<Distribution> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot build a distribution from an empty score list"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let max = scores
        .scores()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .scores()
        .iter()
        .map(|s| ((s - max) / temperature).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    let probs = exps.into_iter().map(|e| e / z).collect();
    let mut seen = std::collections::HashSet::new();
    for id in scores.ids() {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(Distribution::from_parts_unchecked(scores.ids().to_vec(), probs))
}
