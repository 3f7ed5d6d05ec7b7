use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized probabilities over candidate passage ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    ids: Vec<String>,
    probs: Vec<f64>,
}

impl Distribution {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn prob(&self, id: &str) -> Option<f64> {
        self.ids.iter().position(|x| x == id).map(|i| self.probs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.ids.iter().map(String::as_str).zip(self.probs.iter().copied())
    }

    pub fn same_support(&self, other: &Distribution) -> bool {
        self.ids == other.ids
    }

    pub(crate) fn from_parts_unchecked(ids: Vec<String>, probs: Vec<f64>) -> Self {
        Self { ids, probs }
    }
}

/// Normalize non-negative weights into a [`Distribution`].
pub fn make_distribution<S: Into<String>>(
    ids: impl IntoIterator<Item = S>,
    weights: &[f64],
) -> Result<Distribution> {
    let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
    if ids.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            left: ids.len(),
            right: weights.len(),
        });
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in &ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::invalid(format!(
            "weights must be finite and non-negative, got {w}"
        )));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("all weights are zero"));
    }
    let probs = weights.iter().map(|w| w / total).collect();
    Ok(Distribution { ids, probs })
}
