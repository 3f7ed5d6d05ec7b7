//! Parallel-sentence mining with margin scoring, cloze construction by
//! entity masking, and balanced per-language sampling.

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot_f64, DenseVector};
use crate::error::{Error, Result};

pub const DEFAULT_KNN: usize = 4;
pub const DEFAULT_THRESHOLD: f64 = 1.5;
/// Used for Japanese and Chinese.
pub const CJ_THRESHOLD: f64 = 1.65;
pub const DEFAULT_SAMPLING_ALPHA: f64 = 0.5;
pub const DEFAULT_PLACEHOLDER: &str = "<mask>";

/// Margin threshold for an `en`-`lang` pair.
pub fn default_threshold(lang: &str) -> f64 {
    let base = lang.split(['-', '_']).next().unwrap_or(lang);
    match base {
        "ja" | "zh" => CJ_THRESHOLD,
        _ => DEFAULT_THRESHOLD,
    }
}

/// Entity mention as a character range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolSentence {
    pub text: String,
    pub embedding: DenseVector,
    pub entities: Vec<EntitySpan>,
}

impl PoolSentence {
    pub fn new(text: impl Into<String>, embedding: DenseVector) -> Self {
        Self {
            text: text.into(),
            embedding,
            entities: Vec::new(),
        }
    }

    pub fn with_entities(mut self, entities: Vec<EntitySpan>) -> Self {
        self.entities = entities;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentencePool {
    lang: String,
    sentences: Vec<PoolSentence>,
}

impl SentencePool {
    pub fn new(lang: impl Into<String>, sentences: Vec<PoolSentence>) -> Result<Self> {
        if let Some(first) = sentences.first() {
            let dim = first.embedding.dim();
            if let Some(s) = sentences.iter().find(|s| s.embedding.dim() != dim) {
                return Err(Error::DimensionMismatch {
                    left: s.embedding.dim(),
                    right: dim,
                });
            }
        }
        Ok(Self {
            lang: lang.into(),
            sentences,
        })
    }

    pub fn lang(&self) -> &str {
        &self.lang
    }

    pub fn sentences(&self) -> &[PoolSentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    fn dim(&self) -> Option<usize> {
        self.sentences.first().map(|s| s.embedding.dim())
    }

    /// Unit-normalized rows; zero vectors stay zero so their cosines are 0.
    fn normalized(&self) -> Vec<Vec<f64>> {
        self.sentences
            .iter()
            .map(|s| {
                let v: Vec<f64> = s.embedding.values().iter().map(|&x| x as f64).collect();
                let n = dot_f64(&v, &v).sqrt();
                if n > 0.0 {
                    v.into_iter().map(|x| x / n).collect()
                } else {
                    v
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub cosine: f64,
}

/// Neighbor lists in both directions, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub a_to_b: Vec<Vec<Neighbor>>,
    pub b_to_a: Vec<Vec<Neighbor>>,
}

fn top_neighbors(query: &[f64], pool: &[Vec<f64>], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = pool
        .iter()
        .enumerate()
        .map(|(index, v)| Neighbor {
            index,
            cosine: dot_f64(query, v),
        })
        .collect();
    let k = k.min(all.len());
    if k < all.len() {
        all.select_nth_unstable_by(k, |x, y| {
            y.cosine.total_cmp(&x.cosine).then(x.index.cmp(&y.index))
        });
        all.truncate(k);
    }
    all.sort_by(|x, y| y.cosine.total_cmp(&x.cosine).then(x.index.cmp(&y.index)));
    all
}

/// For every sentence, its `k` most cosine-similar sentences in the other pool.
pub fn cosine_knn(pool_a: &SentencePool, pool_b: &SentencePool, k: usize) -> Result<KnnResult> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let (Some(da), Some(db)) = (pool_a.dim(), pool_b.dim()) else {
        return Err(Error::invalid("cannot search an empty sentence pool"));
    };
    if da != db {
        return Err(Error::DimensionMismatch { left: da, right: db });
    }
    let a = pool_a.normalized();
    let b = pool_b.normalized();
    Ok(knn_normalized(&a, &b, k))
}

fn knn_normalized(a: &[Vec<f64>], b: &[Vec<f64>], k: usize) -> KnnResult {
    KnnResult {
        a_to_b: a.par_iter().map(|q| top_neighbors(q, b, k)).collect(),
        b_to_a: b.par_iter().map(|q| top_neighbors(q, a, k)).collect(),
    }
}

/// Ratio of `cos_ij` to the average neighborhood cosine of both sides:
/// `cos_ij / (sum(N_i) / 2k + sum(N_j) / 2k)`.
pub fn margin_score(
    cos_ij: f64,
    neighbors_i: &[f64],
    neighbors_j: &[f64],
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if neighbors_i.is_empty() || neighbors_j.is_empty() {
        return Err(Error::invalid("neighbor lists must be non-empty"));
    }
    if neighbors_i.len() > k || neighbors_j.len() > k {
        return Err(Error::invalid(format!(
            "neighbor lists ({}, {}) longer than k = {k}",
            neighbors_i.len(),
            neighbors_j.len()
        )));
    }
    let two_k = 2.0 * k as f64;
    let denom = neighbors_i.iter().sum::<f64>() / two_k + neighbors_j.iter().sum::<f64>() / two_k;
    if denom == 0.0 {
        return Err(Error::invalid("margin denominator is zero"));
    }
    Ok(cos_ij / denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cloze {
    pub en_cloze: String,
    /// `None` when no foreign sentence was given.
    pub l_cloze: Option<String>,
    pub answer: String,
}

fn char_to_byte(s: &str, char_idx: usize) -> Option<usize> {
    if char_idx == s.chars().count() {
        return Some(s.len());
    }
    s.char_indices().nth(char_idx).map(|(b, _)| b)
}

fn find_case_insensitive(haystack: &str, needle: &str) -> Option<Range<usize>> {
    let needle: Vec<char> = needle.chars().flat_map(char::to_lowercase).collect();
    for (start, _) in haystack.char_indices() {
        let mut it = haystack[start..].char_indices().flat_map(|(off, c)| {
            let end = off + c.len_utf8();
            c.to_lowercase().map(move |l| (l, end))
        });
        let mut end = start;
        let mut ok = true;
        for n in &needle {
            match it.next() {
                Some((l, e)) if l == *n => end = start + e,
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && !needle.is_empty() && haystack.is_char_boundary(end) {
            return Some(start..end);
        }
    }
    None
}

/// Mask the answer span of `sentence`, and its first occurrence in a
/// Latin-script `l_sentence` (exact match first, then case-insensitive).
pub fn make_cloze(
    sentence: &str,
    answer_span: Range<usize>,
    l_sentence: Option<&str>,
    l_is_latin: bool,
    placeholder: &str,
) -> Result<Cloze> {
    let len = sentence.chars().count();
    let bad = || Error::InvalidSpan {
        start: answer_span.start,
        end: answer_span.end,
        len,
    };
    if answer_span.start >= answer_span.end || answer_span.end > len {
        return Err(bad());
    }
    let start = char_to_byte(sentence, answer_span.start).ok_or_else(bad)?;
    let end = char_to_byte(sentence, answer_span.end).ok_or_else(bad)?;
    let answer = &sentence[start..end];
    if answer.trim().is_empty() {
        return Err(bad());
    }
    let en_cloze = format!("{}{placeholder}{}", &sentence[..start], &sentence[end..]);
    let l_cloze = l_sentence.map(|l| {
        if !l_is_latin {
            return l.to_string();
        }
        let hit = l
            .find(answer)
            .map(|b| b..b + answer.len())
            .or_else(|| find_case_insensitive(l, answer));
        match hit {
            Some(r) => format!("{}{placeholder}{}", &l[..r.start], &l[r.end..]),
            None => l.to_string(),
        }
    });
    Ok(Cloze {
        en_cloze,
        l_cloze,
        answer: answer.to_string(),
    })
}

/// Whether most alphabetic characters of `text` are Latin letters.
pub fn is_latin_text(text: &str) -> bool {
    let (mut latin, mut total) = (0usize, 0usize);
    for c in text.chars().filter(|c| c.is_alphabetic()) {
        total += 1;
        if matches!(c as u32, 0x41..=0x5A | 0x61..=0x7A | 0xC0..=0x24F | 0x1E00..=0x1EFF) {
            latin += 1;
        }
    }
    total > 0 && latin * 2 > total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub en_text: String,
    pub l_text: String,
    pub l_lang: String,
    pub margin: f64,
    pub answer: String,
    #[serde(default)]
    pub entity_label: String,
    pub en_cloze: String,
    pub l_cloze: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<String>,
    pub en_index: usize,
    pub l_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningConfig {
    pub k: usize,
    /// Fixed threshold; `None` picks [`default_threshold`] by language.
    pub threshold: Option<f64>,
    pub placeholder: String,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_KNN,
            threshold: None,
            placeholder: DEFAULT_PLACEHOLDER.to_string(),
        }
    }
}

impl MiningConfig {
    pub fn threshold_for(&self, lang: &str) -> f64 {
        self.threshold.unwrap_or_else(|| default_threshold(lang))
    }
}

/// Mine English-to-L pairs whose margin reaches the threshold.
///
/// Each English sentence proposes its best-margin L sentence; each L sentence
/// keeps only its highest-margin English claimant (ties go to the earlier
/// sentence). A kept pair yields one [`ParallelPair`] per English entity.
pub fn mine_parallel_pairs(
    en_pool: &SentencePool,
    l_pool: &SentencePool,
    config: &MiningConfig,
) -> Result<Vec<ParallelPair>> {
    for s in en_pool.sentences() {
        let len = s.text.chars().count();
        for e in &s.entities {
            if e.start >= e.end || e.end > len {
                return Err(Error::InvalidSpan {
                    start: e.start,
                    end: e.end,
                    len,
                });
            }
        }
    }
    if en_pool.is_empty() || l_pool.is_empty() {
        return Ok(Vec::new());
    }
    if config.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let (de, dl) = (en_pool.dim().unwrap_or(0), l_pool.dim().unwrap_or(0));
    if de != dl {
        return Err(Error::DimensionMismatch { left: de, right: dl });
    }
    let threshold = config.threshold_for(l_pool.lang());
    let k = config.k.min(en_pool.len()).min(l_pool.len());
    let en = en_pool.normalized();
    let l = l_pool.normalized();
    let knn = knn_normalized(&en, &l, k);
    let two_k = 2.0 * k as f64;
    let side = |lists: &[Vec<Neighbor>]| -> Vec<f64> {
        lists
            .iter()
            .map(|ns| ns.iter().map(|n| n.cosine).sum::<f64>() / two_k)
            .collect()
    };
    let r_en = side(&knn.a_to_b);
    let r_l = side(&knn.b_to_a);

    let best: Vec<Option<(usize, f64)>> = en
        .par_iter()
        .enumerate()
        .map(|(i, ei)| {
            let mut best: Option<(usize, f64)> = None;
            for (j, lj) in l.iter().enumerate() {
                let denom = r_en[i] + r_l[j];
                if denom <= 0.0 {
                    continue;
                }
                let m = dot_f64(ei, lj) / denom;
                if best.is_none_or(|(_, b)| m > b) {
                    best = Some((j, m));
                }
            }
            best.filter(|(_, m)| *m >= threshold)
        })
        .collect();

    let mut claim: Vec<Option<(usize, f64)>> = vec![None; l.len()];
    for (i, b) in best.iter().enumerate() {
        if let Some((j, m)) = *b {
            if claim[j].is_none_or(|(_, cm)| m > cm) {
                claim[j] = Some((i, m));
            }
        }
    }
    let mut kept: Vec<(usize, usize, f64)> = claim
        .iter()
        .enumerate()
        .filter_map(|(j, c)| c.map(|(i, m)| (i, j, m)))
        .collect();
    kept.sort_by_key(|&(i, _, _)| i);

    let mut pairs = Vec::new();
    for (i, j, margin) in kept {
        let es = &en_pool.sentences()[i];
        let ls = &l_pool.sentences()[j];
        let latin = is_latin_text(&ls.text);
        for ent in &es.entities {
            let cloze = make_cloze(
                &es.text,
                ent.start..ent.end,
                Some(&ls.text),
                latin,
                &config.placeholder,
            )?;
            pairs.push(ParallelPair {
                en_text: es.text.clone(),
                l_text: ls.text.clone(),
                l_lang: l_pool.lang().to_string(),
                margin,
                answer: cloze.answer,
                entity_label: ent.label.clone(),
                en_cloze: cloze.en_cloze,
                l_cloze: cloze.l_cloze.unwrap_or_default(),
                page: None,
                en_index: i,
                l_index: j,
            });
        }
    }
    Ok(pairs)
}

/// One linked page pair: English sentences and the L-language sentences of
/// the page connected to it.
#[derive(Debug, Clone)]
pub struct PageTask {
    pub page: String,
    pub en: SentencePool,
    pub foreign: SentencePool,
}

/// Mine every page pair independently; output is ordered by page id, then
/// language, then English sentence order.
pub fn mine_pages(tasks: &[PageTask], config: &MiningConfig) -> Result<Vec<ParallelPair>> {
    let mut order: Vec<&PageTask> = tasks.iter().collect();
    order.sort_by(|a, b| a.page.cmp(&b.page).then_with(|| a.foreign.lang().cmp(b.foreign.lang())));
    let mined = order
        .par_iter()
        .map(|t| {
            let mut pairs = mine_parallel_pairs(&t.en, &t.foreign, config)?;
            for p in &mut pairs {
                p.page = Some(t.page.clone());
            }
            Ok(pairs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mined.into_iter().flatten().collect())
}

/// Per-language example counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LanguageStats(BTreeMap<String, u64>);

impl LanguageStats {
    pub fn new(counts: BTreeMap<String, u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("language stats are empty"));
        }
        if let Some((lang, _)) = counts.iter().find(|(_, &n)| n == 0) {
            return Err(Error::invalid(format!("language `{lang}` has zero examples")));
        }
        Ok(Self(counts))
    }

    pub fn from_pairs(pairs: &[ParallelPair]) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for p in pairs {
            *counts.entry(p.l_lang.clone()).or_insert(0) += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub alpha: f64,
    pub probabilities: BTreeMap<String, f64>,
    pub quotas: BTreeMap<String, u64>,
}

/// Smoothed multinomial `p_i = f_i^alpha / sum_j f_j^alpha` with
/// `f_i = n_i / sum_j n_j`.
pub fn sampling_probabilities(stats: &LanguageStats, alpha: f64) -> Result<BTreeMap<String, f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0, 1], got {alpha}")));
    }
    let total = stats.total() as f64;
    let smoothed: Vec<(&String, f64)> = stats
        .counts()
        .iter()
        .map(|(l, &n)| (l, (n as f64 / total).powf(alpha)))
        .collect();
    let z: f64 = smoothed.iter().map(|(_, v)| v).sum();
    Ok(smoothed.into_iter().map(|(l, v)| (l.clone(), v / z)).collect())
}

/// Integer quotas summing to `total`, proportional to the smoothed
/// probabilities, never exceeding a language's available count.
///
/// Languages whose share exceeds their count are capped and the excess is
/// redistributed over the rest in proportion to their probabilities; the
/// final rounding uses largest remainders (ties by language code).
pub fn balanced_sample_counts(
    stats: &LanguageStats,
    alpha: f64,
    total: u64,
) -> Result<SamplingPlan> {
    if total == 0 {
        return Err(Error::invalid("total must be at least 1"));
    }
    if total > stats.total() {
        return Err(Error::invalid(format!(
            "requested {total} examples but only {} are available",
            stats.total()
        )));
    }
    let probabilities = sampling_probabilities(stats, alpha)?;
    let mut quotas: BTreeMap<String, u64> = BTreeMap::new();
    let mut active: Vec<&String> = probabilities.keys().collect();
    let mut remaining = total;
    let ideal = loop {
        let mass: f64 = active.iter().map(|l| probabilities[*l]).sum();
        let ideal: Vec<(&String, f64)> = active
            .iter()
            .map(|l| (*l, probabilities[*l] / mass * remaining as f64))
            .collect();
        let over: Vec<&String> = ideal
            .iter()
            .filter(|(l, v)| *v > stats.counts()[*l] as f64)
            .map(|(l, _)| *l)
            .collect();
        if over.is_empty() {
            break ideal;
        }
        for l in over {
            let n = stats.counts()[l];
            quotas.insert(l.clone(), n);
            remaining -= n;
            active.retain(|a| *a != l);
        }
    };
    let mut assigned = 0u64;
    let mut fractions = Vec::with_capacity(ideal.len());
    for (l, v) in &ideal {
        let floor = (v.floor() as u64).min(stats.counts()[*l]);
        quotas.insert((*l).clone(), floor);
        assigned += floor;
        fractions.push((*l, v - floor as f64));
    }
    fractions.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut leftover = remaining - assigned;
    while leftover > 0 {
        let before = leftover;
        for (l, _) in &fractions {
            if leftover == 0 {
                break;
            }
            let q = quotas.get_mut(*l).expect("inserted above");
            if *q < stats.counts()[*l] {
                *q += 1;
                leftover -= 1;
            }
        }
        if before == leftover {
            return Err(Error::invalid("cannot place remaining quota"));
        }
    }
    Ok(SamplingPlan {
        alpha,
        probabilities,
        quotas,
    })
}

/// Keep each language's `quota` highest-margin pairs; input order is kept
/// among equal margins and in the output.
pub fn select_by_quota(pairs: &[ParallelPair], quotas: &BTreeMap<String, u64>) -> Vec<ParallelPair> {
    let mut by_lang: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        by_lang.entry(p.l_lang.as_str()).or_default().push(i);
    }
    let mut keep = vec![false; pairs.len()];
    for (lang, mut idx) in by_lang {
        let quota = quotas.get(lang).copied().unwrap_or(0) as usize;
        idx.sort_by(|&a, &b| pairs[b].margin.total_cmp(&pairs[a].margin).then(a.cmp(&b)));
        for &i in idx.iter().take(quota) {
            keep[i] = true;
        }
    }
    pairs
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| p.clone())
        .collect()
}
