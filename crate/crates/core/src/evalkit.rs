//! Evaluation metrics: answer recall within a token budget, answer recall in
//! the top-N passages split by answer language, and answer quality
//! (token F1, exact match, sentence BLEU) with macro averages.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{Corpus, Query};
use crate::error::{Error, Result};
use crate::index::TokenSlice;
use crate::scoring::ScoreList;
use crate::tokenize::tokens;

pub const DEFAULT_TOP_N: usize = 100;
pub const BLEU_MAX_ORDER: usize = 4;

pub type PerLanguage = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalJudgment {
    pub query_id: String,
    pub hit: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_tokens: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_n: Option<usize>,
    pub matched_answer_lang: Option<String>,
}

/// NFKC and lowercase; the form in which answers are searched in passages.
pub fn normalize_for_match(text: &str) -> String {
    text.nfkc().collect::<String>().to_lowercase()
}

/// Language of the first answer (in language order) found in `haystack`.
/// `haystack` must already be normalized.
fn find_answer<'a>(
    answers: impl Iterator<Item = (&'a str, &'a str)>,
    haystacks: &[String],
) -> Option<String> {
    for (lang, answer) in answers {
        let needle = normalize_for_match(answer);
        if needle.trim().is_empty() {
            continue;
        }
        if haystacks.iter().any(|h| h.contains(&needle)) {
            return Some(lang.to_string());
        }
    }
    None
}

fn lang_answers(q: &Query) -> impl Iterator<Item = (&str, &str)> {
    q.answers
        .iter()
        .flat_map(|(lang, list)| list.iter().map(move |a| (lang.as_str(), a.as_str())))
}

fn rate_by_language<'a>(items: impl Iterator<Item = (&'a str, bool)>) -> PerLanguage {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (lang, hit) in items {
        let c = counts.entry(lang.to_string()).or_default();
        c.0 += usize::from(hit);
        c.1 += 1;
    }
    counts
        .into_iter()
        .map(|(lang, (hits, n))| (lang, hits as f64 / n as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecall {
    pub budget_tokens: usize,
    pub per_language: PerLanguage,
    pub judgments: Vec<RetrievalJudgment>,
}

/// Fraction of queries, per query language, whose budget slice contains any
/// gold answer (in any language) as a substring after normalization.
pub fn recall_at_tokens(
    queries: &[Query],
    slices: &HashMap<String, TokenSlice>,
    corpus: &Corpus,
    budget_tokens: usize,
) -> Result<TokenRecall> {
    let judgments: Vec<RetrievalJudgment> = queries
        .par_iter()
        .map(|q| {
            let slice = slices
                .get(&q.id)
                .ok_or_else(|| Error::invalid(format!("no slice for query `{}`", q.id)))?;
            if slice.budget != budget_tokens {
                return Err(Error::invalid(format!(
                    "slice for query `{}` was built with budget {}, expected {budget_tokens}",
                    q.id, slice.budget
                )));
            }
            let text = normalize_for_match(&slice.text(corpus)?);
            let matched = find_answer(lang_answers(q), std::slice::from_ref(&text));
            Ok(RetrievalJudgment {
                query_id: q.id.clone(),
                hit: matched.is_some(),
                budget_tokens: Some(budget_tokens),
                top_n: None,
                matched_answer_lang: matched,
            })
        })
        .collect::<Result<_>>()?;
    let per_language = rate_by_language(queries.iter().zip(&judgments).map(|(q, j)| (q.lang.as_str(), j.hit)));
    Ok(TokenRecall {
        budget_tokens,
        per_language,
        judgments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageRecall {
    pub top_n: usize,
    /// An answer in the query's own language was found.
    pub target: PerLanguage,
    /// An answer in any language was found.
    pub any: PerLanguage,
}

/// Answer recall over the top-`n` passages of each ranking, judged per
/// passage, split by whether the matching answer is in the query language.
pub fn recall_at_passages_by_language(
    queries: &[Query],
    ranked: &HashMap<String, ScoreList>,
    corpus: &Corpus,
    n: usize,
) -> Result<PassageRecall> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let hits: Vec<(bool, bool)> = queries
        .par_iter()
        .map(|q| {
            let list = ranked
                .get(&q.id)
                .ok_or_else(|| Error::invalid(format!("no ranking for query `{}`", q.id)))?;
            let texts: Vec<String> = list
                .ids()
                .iter()
                .take(n)
                .map(|id| corpus.require(id).map(|p| normalize_for_match(&p.text)))
                .collect::<Result<_>>()?;
            let target = find_answer(
                q.answers_in(&q.lang).iter().map(|a| (q.lang.as_str(), a.as_str())),
                &texts,
            )
            .is_some();
            let any = target || find_answer(lang_answers(q), &texts).is_some();
            Ok((target, any))
        })
        .collect::<Result<_>>()?;
    let langs = || queries.iter().map(|q| q.lang.as_str());
    Ok(PassageRecall {
        top_n: n,
        target: rate_by_language(langs().zip(hits.iter().map(|h| h.0))),
        any: rate_by_language(langs().zip(hits.iter().map(|h| h.1))),
    })
}

/// NFKC, lowercase, punctuation removed, whitespace collapsed.
pub fn normalize_answer(text: &str) -> String {
    let lowered = normalize_for_match(text);
    let stripped: String = lowered
        .chars()
        .filter(|&c| !is_punctuation(c))
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_punctuation(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
    )
}

fn answer_tokens(normalized: &str) -> Vec<&str> {
    tokens(normalized)
}

fn counts<'a>(toks: &[&'a str]) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for t in toks {
        *m.entry(*t).or_insert(0) += 1;
    }
    m
}

/// Multiset token F1 between normalized strings.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let (p, g) = (normalize_answer(prediction), normalize_answer(gold));
    let (pt, gt) = (answer_tokens(&p), answer_tokens(&g));
    if pt.is_empty() || gt.is_empty() {
        return f64::from(u8::from(pt == gt));
    }
    let gc = counts(&gt);
    let overlap: usize = counts(&pt)
        .iter()
        .map(|(t, &n)| n.min(gc.get(t).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pt.len() as f64;
    let recall = overlap as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn exact_match(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

fn ngrams<'a>(toks: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU over normalized tokens: uniform weights up to 4-grams,
/// clipped counts against all references, add-one smoothing for orders above
/// one, brevity penalty against the reference closest in length (shorter wins
/// ties).
pub fn sentence_bleu(prediction: &str, references: &[&str]) -> f64 {
    let p = normalize_answer(prediction);
    let pt = answer_tokens(&p);
    let refs: Vec<String> = references.iter().map(|r| normalize_answer(r)).collect();
    let rts: Vec<Vec<&str>> = refs.iter().map(|r| answer_tokens(r)).collect();
    if pt.is_empty() || rts.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=BLEU_MAX_ORDER {
        let cand = ngrams(&pt, n);
        let ref_grams: Vec<_> = rts.iter().map(|r| ngrams(r, n)).collect();
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(g, &c)| {
                let max_ref = ref_grams.iter().map(|r| r.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                c.min(max_ref)
            })
            .sum();
        let precision = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += precision.ln() / BLEU_MAX_ORDER as f64;
    }
    let c = pt.len();
    let r = rts
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_sum.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QaScores {
    pub f1: f64,
    pub em: f64,
    pub bleu: f64,
}

/// Scores of one prediction against its gold answers.
pub fn score_prediction(prediction: &str, golds: &[&str]) -> QaScores {
    if golds.is_empty() {
        return QaScores {
            f1: 0.0,
            em: 0.0,
            bleu: 0.0,
        };
    }
    QaScores {
        f1: golds.iter().map(|g| token_f1(prediction, g)).fold(0.0, f64::max),
        em: f64::from(u8::from(golds.iter().any(|g| exact_match(prediction, g)))),
        bleu: sentence_bleu(prediction, golds),
    }
}

/// Gold answers used for answer quality: those in the query language, or all
/// answers when none are in it.
pub fn qa_golds(q: &Query) -> Vec<&str> {
    let own = q.answers_in(&q.lang);
    if own.is_empty() {
        q.all_answers().collect()
    } else {
        own.iter().map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaMetrics {
    pub f1: PerLanguage,
    pub em: PerLanguage,
    pub bleu: PerLanguage,
    pub counts: BTreeMap<String, usize>,
}

/// Per-language mean F1, EM and BLEU over the predicted queries.
pub fn qa_metrics(predictions: &HashMap<String, String>, golds: &[Query]) -> Result<QaMetrics> {
    let by_id: HashMap<&str, &Query> = golds.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut ids: Vec<&String> = predictions.keys().collect();
    ids.sort();
    let scored: Vec<(&str, QaScores)> = ids
        .par_iter()
        .map(|id| {
            let q = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::UnknownId((*id).clone()))?;
            Ok((q.lang.as_str(), score_prediction(&predictions[*id], &qa_golds(q))))
        })
        .collect::<Result<_>>()?;
    let mut sums: BTreeMap<String, (QaScores, usize)> = BTreeMap::new();
    for (lang, s) in &scored {
        let e = sums.entry(lang.to_string()).or_insert((
            QaScores {
                f1: 0.0,
                em: 0.0,
                bleu: 0.0,
            },
            0,
        ));
        e.0.f1 += s.f1;
        e.0.em += s.em;
        e.0.bleu += s.bleu;
        e.1 += 1;
    }
    let mean = |f: fn(&QaScores) -> f64| -> PerLanguage {
        sums.iter().map(|(l, (s, n))| (l.clone(), f(s) / *n as f64)).collect()
    };
    Ok(QaMetrics {
        f1: mean(|s| s.f1),
        em: mean(|s| s.em),
        bleu: mean(|s| s.bleu),
        counts: sums.iter().map(|(l, (_, n))| (l.clone(), *n)).collect(),
    })
}

/// Unweighted mean over languages.
pub fn macro_average(per_language: &PerLanguage) -> Result<f64> {
    if per_language.is_empty() {
        return Err(Error::invalid("macro average of no languages"));
    }
    Ok(per_language.values().sum::<f64>() / per_language.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub per_language: PerLanguage,
    pub macro_average: f64,
}

/// Named metrics, each with per-language values and their macro average.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, MetricRow>,
}

impl MetricReport {
    pub fn insert(&mut self, name: impl Into<String>, per_language: PerLanguage) -> Result<()> {
        let macro_average = macro_average(&per_language)?;
        self.metrics.insert(
            name.into(),
            MetricRow {
                per_language,
                macro_average,
            },
        );
        Ok(())
    }

    pub fn add_token_recall(&mut self, r: &TokenRecall) -> Result<()> {
        self.insert(format!("R@{}t", r.budget_tokens), r.per_language.clone())
    }

    pub fn add_passage_recall(&mut self, r: &PassageRecall) -> Result<()> {
        self.insert(format!("R_target@{}", r.top_n), r.target.clone())?;
        self.insert(format!("R_any@{}", r.top_n), r.any.clone())
    }

    pub fn add_qa(&mut self, m: &QaMetrics) -> Result<()> {
        self.insert("F1", m.f1.clone())?;
        self.insert("EM", m.em.clone())?;
        self.insert("BLEU", m.bleu.clone())
    }

    /// Aligned text table: one row per metric, one column per language, then
    /// the macro average. Values are percentages with one decimal.
    pub fn to_table(&self) -> String {
        let langs: Vec<&String> = {
            let mut v: Vec<&String> = self.metrics.values().flat_map(|r| r.per_language.keys()).collect();
            v.sort();
            v.dedup();
            v
        };
        let name_w = self.metrics.keys().map(|k| k.chars().count()).max().unwrap_or(0).max(6);
        let mut header = format!("{:<name_w$}", "metric");
        for l in &langs {
            header.push_str(&format!(" {l:>6}"));
        }
        header.push_str(&format!(" {:>6}", "macro"));
        let mut out = vec![header];
        for (name, row) in &self.metrics {
            let mut line = format!("{name:<name_w$}");
            for l in &langs {
                match row.per_language.get(*l) {
                    Some(v) => line.push_str(&format!(" {:>6.1}", v * 100.0)),
                    None => line.push_str(&format!(" {:>6}", "-")),
                }
            }
            line.push_str(&format!(" {:>6.1}", row.macro_average * 100.0));
            out.push(line);
        }
        out.join("\n") + "\n"
    }
}
