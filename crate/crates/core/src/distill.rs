//! Distillation targets and training-loss arithmetic.
//!
//! These are value computations only; the cross-attention target is a plain
//! constant, so nothing here carries gradient information.

use serde::{Deserialize, Serialize};

use crate::distribution::{make_distribution, Distribution};
use crate::error::{Error, Result};

pub const DEFAULT_LOSS_ALPHA: f64 = 8.0;
/// Floor applied to the second argument of [`kl_divergence`].
pub const KL_EPS: f64 = 1e-12;

/// Per-token log-probabilities of a gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerLogProbs(Vec<f64>);

impl AnswerLogProbs {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("answer log-probabilities are empty"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v > 0.0) {
            return Err(Error::invalid(format!(
                "log-probabilities must be finite and <= 0, got {v}"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Log-likelihood of the whole answer: the sum of its token log-probabilities.
pub fn answer_log_likelihood(lp: &AnswerLogProbs) -> f64 {
    lp.0.iter().sum()
}

/// `sum_i p_i ln(p_i / max(q_i, eps))`, with `0 ln 0 = 0`.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    if !p.same_support(q) {
        return Err(Error::SupportMismatch);
    }
    let kl = p
        .probs()
        .iter()
        .zip(q.probs())
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(KL_EPS)).ln())
        .sum::<f64>();
    Ok(kl.max(0.0))
}

/// Loss components and their weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub kl: f64,
    pub reader: f64,
    pub align: f64,
    pub total: f64,
    pub alpha: f64,
    pub kind: LossKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `reader + alpha * (kl + align)`
    Stage1,
    /// `alpha * kl + reader`
    EndToEnd,
}

impl LossReport {
    /// Recompute the total from the components.
    pub fn recomputed_total(&self) -> f64 {
        match self.kind {
            LossKind::Stage1 => self.reader + self.alpha * (self.kl + self.align),
            LossKind::EndToEnd => self.alpha * self.kl + self.reader,
        }
    }
}

/// Inputs for the cross-lingual retrieval stage.
#[derive(Debug, Clone)]
pub struct Stage1Inputs<'a> {
    /// Student retrieval distribution for the L-language query.
    pub student_l: &'a Distribution,
    /// Student retrieval distribution for the English query.
    pub student_en: &'a Distribution,
    /// English teacher's retrieval distribution.
    pub teacher: &'a Distribution,
    pub answer_lp_en: &'a AnswerLogProbs,
    pub answer_lp_l: &'a AnswerLogProbs,
    /// Per-step decoder token distributions given each query.
    pub answer_steps_en: &'a [Distribution],
    pub answer_steps_l: &'a [Distribution],
    pub alpha: f64,
}

/// Stage-1 losses:
///
/// - `kl = KL(student_l || teacher) + KL(student_en || teacher)`
/// - `reader = -ll(answer | en) - ll(answer | l)`
/// - `align = KL(student_l || student_en) + mean_t KL(step_l[t] || step_en[t])`
/// - `total = reader + alpha * (kl + align)`
pub fn stage1_losses(inputs: &Stage1Inputs<'_>) -> Result<LossReport> {
    if inputs.answer_steps_en.len() != inputs.answer_steps_l.len() {
        return Err(Error::DimensionMismatch {
            left: inputs.answer_steps_l.len(),
            right: inputs.answer_steps_en.len(),
        });
    }
    let kl = kl_divergence(inputs.student_l, inputs.teacher)?
        + kl_divergence(inputs.student_en, inputs.teacher)?;
    let reader =
        -answer_log_likelihood(inputs.answer_lp_en) - answer_log_likelihood(inputs.answer_lp_l);
    let steps = inputs.answer_steps_l.len();
    let answer_align = if steps == 0 {
        0.0
    } else {
        inputs
            .answer_steps_l
            .iter()
            .zip(inputs.answer_steps_en)
            .map(|(l, en)| kl_divergence(l, en))
            .sum::<Result<f64>>()?
            / steps as f64
    };
    let align = kl_divergence(inputs.student_l, inputs.student_en)? + answer_align;
    let total = reader + inputs.alpha * (kl + align);
    Ok(LossReport {
        kl,
        reader,
        align,
        total,
        alpha: inputs.alpha,
        kind: LossKind::Stage1,
    })
}

/// First-output-token cross-attention scores per retrieved passage.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttentionBundle {
    head_count: usize,
    ids: Vec<String>,
    /// Per passage, `head_count x len` scores, head-major.
    scores: Vec<Vec<f64>>,
}

impl CrossAttentionBundle {
    pub fn new(head_count: usize, ids: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self> {
        if head_count == 0 {
            return Err(Error::invalid("head count must be positive"));
        }
        if ids.is_empty() {
            return Err(Error::invalid("cross-attention bundle has no passages"));
        }
        if ids.len() != scores.len() {
            return Err(Error::DimensionMismatch {
                left: ids.len(),
                right: scores.len(),
            });
        }
        for (id, s) in ids.iter().zip(&scores) {
            if s.len() % head_count != 0 {
                return Err(Error::invalid(format!(
                    "passage `{id}` has {} scores, not a multiple of {head_count} heads",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid(format!(
                    "passage `{id}` has negative or non-finite attention"
                )));
            }
        }
        Ok(Self {
            head_count,
            ids,
            scores,
        })
    }

    /// Slice a `[heads, total_tokens]` array into passages at `offsets`.
    pub fn from_ragged(
        head_count: usize,
        ids: Vec<String>,
        data: &[f32],
        offsets: &[usize],
    ) -> Result<Self> {
        let total = offsets.last().copied().unwrap_or(0);
        if offsets.len() != ids.len() + 1 || data.len() != head_count * total {
            return Err(Error::invalid(format!(
                "ragged cross-attention: {} ids, {} offsets, {} values for {head_count} heads",
                ids.len(),
                offsets.len(),
                data.len()
            )));
        }
        let scores = offsets
            .windows(2)
            .map(|w| {
                (0..head_count)
                    .flat_map(|h| data[h * total + w[0]..h * total + w[1]].iter().map(|&v| v as f64))
                    .collect()
            })
            .collect();
        Self::new(head_count, ids, scores)
    }

    pub fn head_count(&self) -> usize {
        self.head_count
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Relevance target from cross-attention mass: for each passage, the sum over
/// heads and tokens divided by the head count, then normalized.
pub fn cross_attention_target(ca: &CrossAttentionBundle) -> Result<Distribution> {
    let h = ca.head_count as f64;
    let raw: Vec<f64> = ca
        .scores
        .iter()
        .map(|s| s.iter().sum::<f64>() / h)
        .collect();
    make_distribution(ca.ids.iter().cloned(), &raw)
}

/// End-to-end loss: `alpha * KL(retrieval || target) + reader`.
pub fn stage2_loss(
    retrieval: &Distribution,
    ca_target: &Distribution,
    answer_lp: &AnswerLogProbs,
    alpha: f64,
) -> Result<LossReport> {
    let kl = kl_divergence(retrieval, ca_target)?;
    let reader = -answer_log_likelihood(answer_lp);
    Ok(LossReport {
        kl,
        reader,
        align: 0.0,
        total: alpha * kl + reader,
        alpha,
        kind: LossKind::EndToEnd,
    })
}
