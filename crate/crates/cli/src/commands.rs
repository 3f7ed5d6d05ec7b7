use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use clir::corpus::{load_corpus_with, load_queries, Corpus, LoadOptions};
use clir::distill::{
    cross_attention_target, kl_divergence, stage1_losses, stage2_loss, AnswerLogProbs, CrossAttentionBundle,
    Stage1Inputs,
};
use clir::distribution::{make_distribution, Distribution};
use clir::embedding::DenseVector;
use clir::evalkit::{qa_metrics, recall_at_passages_by_language, recall_at_tokens, MetricReport};
use clir::index::{
    build_index, query_embeddings_from_bundle, search_topk, token_budget_slice, IndexMode, QueryEmbedding,
    RetrievalIndex, TokenSlice,
};
use clir::io::read_jsonl;
use clir::mining::{
    balanced_sample_counts, mine_pages, select_by_quota, EntitySpan, LanguageStats, MiningConfig, PageTask,
    PoolSentence, SentencePool,
};
use clir::pipeline::{plan_refresh, run_schedule, TrainingSetState};
use clir::scoring::{retrieval_distribution, ScoreList};
use clir::synth::{
    build_meta_prompt, choose_wh_word, extract_anchor_examples, generate_icl_prompts, parse_transformed_question,
    AnchorExample, AnchoredSentence, MetaExample, PageInfo, SynthConfig,
};
use clir::tensor::{load_tensor_bundle, Tensor, TensorBundle};

use crate::args::*;
use crate::output;

pub const ROLE_SENTENCE_DENSE: &str = "sentence_dense";

/// A problem with the invocation rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Run a parsed command; the returned value is the run summary.
pub fn execute(cli: Cli) -> Result<Value> {
    let seed = cli.seed;
    match cli.command {
        Command::Mine(a) => mine(a),
        Command::Index(a) => index(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Targets(a) => targets(a),
        Command::Synth(SynthCommand::MetaPrompts(a)) => meta_prompts(a),
        Command::Synth(SynthCommand::Prompts(a)) => icl_prompts(a, seed),
        Command::Synth(SynthCommand::Parse(a)) => parse_responses(a),
        Command::Refresh(a) => refresh(a),
        Command::Eval(a) => eval(a),
    }
}

fn bundle(path: &Path) -> Result<TensorBundle> {
    load_tensor_bundle(path).with_context(|| format!("loading tensor bundle {}", path.display()))
}

fn corpus(path: &Path, max_tokens: usize) -> Result<Corpus> {
    load_corpus_with(
        path,
        LoadOptions {
            max_tokens: Some(max_tokens),
        },
    )
    .with_context(|| format!("loading corpus {}", path.display()))
}

fn role<'a>(bundle: &'a TensorBundle, role: &str) -> Result<&'a Tensor> {
    bundle
        .by_role(role)
        .ok_or_else(|| clir::Error::MissingArray(role.to_string()).into())
}

fn ids_of(t: &Tensor) -> Result<Vec<String>> {
    t.entry
        .ids
        .clone()
        .ok_or_else(|| anyhow::anyhow!("array `{}` has no ids", t.entry.name))
}

#[derive(Debug, Deserialize)]
struct SentenceRecord {
    id: String,
    page: String,
    lang: String,
    text: String,
    #[serde(default)]
    entities: Vec<EntitySpan>,
}

fn mine(a: MineArgs) -> Result<Value> {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let records: Vec<SentenceRecord> = read_jsonl(&a.sentences)?;
    let emb = bundle(&a.embeddings)?;
    let table = role(&emb, ROLE_SENTENCE_DENSE)?;
    let [rows, dim] = table.shape() else {
        bail!("`{ROLE_SENTENCE_DENSE}` must be two-dimensional, found {:?}", table.shape());
    };
    let (rows, dim) = (*rows, *dim);
    let row_of: HashMap<String, usize> = ids_of(table)?.into_iter().enumerate().map(|(i, id)| (id, i)).collect();
    if row_of.len() != rows {
        bail!("`{ROLE_SENTENCE_DENSE}` has {} distinct ids for {rows} rows", row_of.len());
    }

    // pages in first-appearance order, languages within a page likewise
    let mut pages: Vec<(String, Vec<(String, Vec<PoolSentence>)>)> = Vec::new();
    for r in records {
        let row = *row_of
            .get(&r.id)
            .ok_or_else(|| clir::Error::MissingEmbedding(r.id.clone()))?;
        let embedding = DenseVector::new(table.data[row * dim..(row + 1) * dim].to_vec())?;
        let sentence = PoolSentence::new(r.text, embedding).with_entities(r.entities);
        let page = match pages.iter_mut().position(|(p, _)| *p == r.page) {
            Some(i) => &mut pages[i].1,
            None => {
                pages.push((r.page.clone(), Vec::new()));
                &mut pages.last_mut().expect("just pushed").1
            }
        };
        match page.iter_mut().find(|(l, _)| *l == r.lang) {
            Some((_, s)) => s.push(sentence),
            None => page.push((r.lang, vec![sentence])),
        }
    }
    let mut tasks = Vec::new();
    for (page, langs) in pages {
        let Some(en) = langs.iter().find(|(l, _)| *l == a.pivot_lang) else {
            log::warn!("page `{page}` has no `{}` sentences; skipped", a.pivot_lang);
            continue;
        };
        let en = SentencePool::new(a.pivot_lang.clone(), en.1.clone())?;
        for (lang, sentences) in langs.into_iter().filter(|(l, _)| *l != a.pivot_lang) {
            tasks.push(PageTask {
                page: page.clone(),
                en: en.clone(),
                foreign: SentencePool::new(lang, sentences)?,
            });
        }
    }
    let config = MiningConfig {
        k: a.k,
        threshold: a.threshold,
        placeholder: a.placeholder,
    };
    let pairs = mine_pages(&tasks, &config)?;
    output::write_jsonl(&a.out, &pairs)?;
    let stats = LanguageStats::from_pairs(&pairs)?;
    let mut summary = json!({"command": "mine", "pages": tasks.len(), "pairs": pairs.len(), "per_language": stats.counts()});
    if let (Some(total), Some(path)) = (a.sample_total, a.sample_out) {
        let plan = balanced_sample_counts(&stats, a.sample_alpha, total)?;
        let selected = select_by_quota(&pairs, &plan.quotas);
        output::write_jsonl(&path, &selected)?;
        summary["sampling"] = serde_json::to_value(&plan)?;
    }
    Ok(summary)
}

fn index(a: IndexArgs) -> Result<Value> {
    let corpus = corpus(&a.corpus, a.max_tokens)?;
    let emb = bundle(&a.embeddings)?;
    let index = build_index(&corpus, &emb, a.mode, a.head_index)?;
    output::write_dir(&a.out, |dir| Ok(index.save(dir)?))?;
    Ok(json!({"command": "index", "mode": a.mode, "passages": index.len(), "head_index": index.head_index()}))
}

fn open_index(s: &IndexSource) -> Result<(RetrievalIndex, Option<Corpus>)> {
    let corpus = s.corpus.as_deref().map(|p| corpus(p, s.max_tokens)).transpose()?;
    let index = match (&s.index, &s.embeddings) {
        (Some(dir), None) => {
            let index = RetrievalIndex::load(dir).with_context(|| format!("loading index {}", dir.display()))?;
            if let Some(mode) = s.mode.filter(|m| *m != index.mode()) {
                return Err(usage(format!("--mode {mode} does not match the saved {} index", index.mode())));
            }
            index
        }
        (None, Some(emb)) => {
            let corpus = corpus.as_ref().ok_or_else(|| usage("--embeddings needs --corpus"))?;
            build_index(corpus, &bundle(emb)?, s.mode.unwrap_or(IndexMode::MultiVector), s.head_index)?
        }
        _ => return Err(usage("give either --index or --corpus with --embeddings")),
    };
    Ok((index, corpus))
}

fn queries_for(index: &RetrievalIndex, path: &Path) -> Result<Vec<(String, QueryEmbedding)>> {
    Ok(query_embeddings_from_bundle(&bundle(path)?, index.mode())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRecord {
    pub query_id: String,
    pub passages: Vec<Hit>,
}

impl RankedRecord {
    fn new(query_id: String, list: &ScoreList) -> Self {
        Self {
            query_id,
            passages: list
                .iter()
                .map(|(id, score)| Hit {
                    id: id.to_string(),
                    score,
                })
                .collect(),
        }
    }

    fn score_list(&self) -> Result<ScoreList> {
        Ok(ScoreList::from_pairs(self.passages.iter().map(|h| (h.id.clone(), h.score)))?)
    }
}

#[derive(Debug, Serialize)]
struct SliceRecord<'a> {
    query_id: &'a str,
    #[serde(flatten)]
    slice: &'a TokenSlice,
}

fn retrieve(a: RetrieveArgs) -> Result<Value> {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let (index, corpus) = open_index(&a.source)?;
    let queries = queries_for(&index, &a.query_embeddings)?;
    let lists: Vec<ScoreList> = queries
        .par_iter()
        .map(|(id, q)| search_topk(&index, q, a.k).with_context(|| format!("query `{id}`")))
        .collect::<Result<_>>()?;
    let records: Vec<RankedRecord> = queries
        .iter()
        .zip(&lists)
        .map(|((id, _), l)| RankedRecord::new(id.clone(), l))
        .collect();
    output::write_jsonl(&a.out, &records)?;
    let mut summary = json!({"command": "retrieve", "mode": index.mode(), "queries": records.len(), "k": a.k});
    if let (Some(budget), Some(path)) = (a.budget, &a.slices_out) {
        let corpus = corpus.as_ref().ok_or_else(|| usage("--budget needs --corpus"))?;
        let slices: Vec<TokenSlice> = lists
            .iter()
            .map(|l| token_budget_slice(l, corpus, budget))
            .collect::<clir::Result<_>>()?;
        let out: Vec<SliceRecord> = queries
            .iter()
            .zip(&slices)
            .map(|((id, _), slice)| SliceRecord { query_id: id, slice })
            .collect();
        output::write_jsonl(path, &out)?;
        summary["budget"] = json!(budget);
    }
    Ok(summary)
}

fn scores_distribution(bundle: &TensorBundle, role_name: &str, temperature: f64) -> Result<Distribution> {
    let t = role(bundle, role_name)?;
    let ids = ids_of(t)?;
    let scores = ScoreList::new(ids, t.data.iter().map(|&v| v as f64).collect())?;
    Ok(retrieval_distribution(&scores, temperature)?)
}

fn log_probs(bundle: &TensorBundle, role_name: &str) -> Result<AnswerLogProbs> {
    let t = role(bundle, role_name)?;
    Ok(AnswerLogProbs::new(t.data.iter().map(|&v| v as f64).collect())?)
}

/// Rows of a [T, vocab] probability table as distributions over "0".."vocab-1".
fn step_distributions(bundle: &TensorBundle, role_name: &str) -> Result<Vec<Distribution>> {
    let Some(t) = bundle.by_role(role_name) else {
        return Ok(Vec::new());
    };
    let [_, vocab] = t.shape() else {
        bail!("`{role_name}` must be [steps, vocab], found {:?}", t.shape());
    };
    let vocab = *vocab;
    t.data
        .chunks(vocab.max(1))
        .map(|row| {
            let w: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            Ok(make_distribution((0..vocab).map(|i| i.to_string()), &w)?)
        })
        .collect()
}

fn as_map(d: &Distribution) -> BTreeMap<String, f64> {
    d.iter().map(|(id, p)| (id.to_string(), p)).collect()
}

fn targets(a: TargetsArgs) -> Result<Value> {
    let b = bundle(&a.bundle)?;
    let report = if a.stage == 2 {
        let ca = role(&b, "cross_attention")?;
        let [heads, _] = ca.shape() else {
            bail!("`cross_attention` must be [heads, tokens], found {:?}", ca.shape());
        };
        let offsets = ca
            .entry
            .offsets
            .clone()
            .ok_or_else(|| anyhow::anyhow!("`cross_attention` needs passage offsets"))?;
        let bundle_ca = CrossAttentionBundle::from_ragged(*heads, ids_of(ca)?, &ca.data, &offsets)?;
        let target = cross_attention_target(&bundle_ca)?;
        let retrieval = scores_distribution(&b, "retrieval_scores", a.temperature)?;
        let loss = stage2_loss(&retrieval, &target, &log_probs(&b, "answer_logprobs")?, a.alpha)?;
        json!({"stage": 2, "target": as_map(&target), "retrieval": as_map(&retrieval), "loss": loss})
    } else {
        let student_l = scores_distribution(&b, "student_l_scores", a.temperature)?;
        let student_en = scores_distribution(&b, "student_en_scores", a.temperature)?;
        let teacher = scores_distribution(&b, "teacher_scores", a.temperature)?;
        let lp_en = log_probs(&b, "answer_logprobs_en")?;
        let lp_l = log_probs(&b, "answer_logprobs_l")?;
        let steps_en = step_distributions(&b, "answer_steps_en")?;
        let steps_l = step_distributions(&b, "answer_steps_l")?;
        let loss = stage1_losses(&Stage1Inputs {
            student_l: &student_l,
            student_en: &student_en,
            teacher: &teacher,
            answer_lp_en: &lp_en,
            answer_lp_l: &lp_l,
            answer_steps_en: &steps_en,
            answer_steps_l: &steps_l,
            alpha: a.alpha,
        })?;
        json!({
            "stage": 1,
            "teacher": as_map(&teacher),
            "student_l": as_map(&student_l),
            "student_en": as_map(&student_en),
            "kl_student_l_teacher": kl_divergence(&student_l, &teacher)?,
            "loss": loss,
        })
    };
    output::write_json(&a.out, &report)?;
    Ok(json!({"command": "targets", "stage": a.stage, "loss": report["loss"]}))
}

/// Anchor examples tagged `{sentence id}:{anchor number}`, plus the skip count.
fn load_anchor_examples(inputs: &AnchorInputs) -> Result<(Vec<(String, AnchorExample)>, usize)> {
    let sentences: Vec<AnchoredSentence> = read_jsonl(&inputs.anchors)?;
    let pages: HashMap<String, PageInfo> = read_jsonl::<PageInfo>(&inputs.pages)?
        .into_iter()
        .map(|p| (p.id.clone(), p))
        .collect();
    let extracted: Vec<(String, clir::synth::AnchorExtraction)> = sentences
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let id = if s.id.is_empty() { i.to_string() } else { s.id.clone() };
            let out = extract_anchor_examples(s, &pages, &inputs.placeholder).with_context(|| format!("sentence `{id}`"))?;
            Ok((id, out))
        })
        .collect::<Result<_>>()?;
    let mut examples = Vec::new();
    let mut skipped = 0;
    for (id, out) in extracted {
        skipped += out.skipped;
        examples.extend(out.examples.into_iter().enumerate().map(|(j, e)| (format!("{id}:{j}"), e)));
    }
    Ok((examples, skipped))
}

#[derive(Debug, Serialize)]
struct MetaPromptRecord<'a> {
    id: &'a str,
    lang: &'a str,
    answer: &'a str,
    answer_en: &'a str,
    entity_type: String,
    wh_word: String,
    prompt: String,
}

fn meta_prompts(a: MetaPromptArgs) -> Result<Value> {
    let (examples, skipped) = load_anchor_examples(&a.inputs)?;
    let records: Vec<MetaPromptRecord> = examples
        .par_iter()
        .map(|(id, e)| {
            let wh_word = choose_wh_word(e.entity_type.label(), &e.lang)?;
            let prompt = build_meta_prompt(e, &wh_word)?.text;
            Ok(MetaPromptRecord {
                id,
                lang: &e.lang,
                answer: &e.answer_l,
                answer_en: &e.answer_en,
                entity_type: e.entity_type.to_string(),
                wh_word,
                prompt,
            })
        })
        .collect::<clir::Result<_>>()?;
    output::write_jsonl(&a.out, &records)?;
    Ok(json!({"command": "synth meta-prompts", "prompts": records.len(), "skipped_anchors": skipped}))
}

fn parse_oversample(specs: &[String]) -> Result<BTreeMap<String, usize>> {
    specs
        .iter()
        .map(|s| {
            let (lang, n) = s
                .split_once('=')
                .ok_or_else(|| usage(format!("--oversample expects LANG=N, got `{s}`")))?;
            let n: usize = n
                .parse()
                .map_err(|_| usage(format!("--oversample count must be a positive integer, got `{n}`")))?;
            if n == 0 {
                return Err(usage(format!("--oversample count for `{lang}` must be positive")));
            }
            Ok((lang.to_string(), n))
        })
        .collect()
}

fn icl_prompts(a: PromptArgs, seed: u64) -> Result<Value> {
    let oversample = parse_oversample(&a.oversample)?;
    if a.meta_examples == 0 {
        return Err(usage("--meta-examples must be at least 1"));
    }
    let (examples, skipped) = load_anchor_examples(&a.inputs)?;
    let meta: Vec<MetaExample> = read_jsonl(&a.meta)?;
    let config = SynthConfig {
        meta_examples: a.meta_examples,
        oversample,
    };
    let records = generate_icl_prompts(&examples, &meta, &config, seed)?;
    output::write_jsonl(&a.out, &records)?;
    Ok(json!({"command": "synth prompts", "prompts": records.len(), "examples": examples.len(), "skipped_anchors": skipped}))
}

#[derive(Debug, Deserialize)]
struct ResponseRecord {
    id: String,
    response: String,
}

#[derive(Debug, Serialize)]
struct QuestionRecord<'a> {
    id: &'a str,
    question: String,
}

#[derive(Debug, Serialize)]
struct FailureRecord<'a> {
    id: &'a str,
    error: String,
}

fn parse_responses(a: ParseArgs) -> Result<Value> {
    let responses: Vec<ResponseRecord> = read_jsonl(&a.responses)?;
    let mut parsed = Vec::new();
    let mut failed = Vec::new();
    for r in &responses {
        match parse_transformed_question(&r.response) {
            Ok(question) => parsed.push(QuestionRecord { id: &r.id, question }),
            Err(e) => {
                log::warn!("response `{}`: {e}", r.id);
                failed.push(FailureRecord {
                    id: &r.id,
                    error: e.to_string(),
                });
            }
        }
    }
    output::write_jsonl(&a.out, &parsed)?;
    if let Some(path) = &a.failures_out {
        output::write_jsonl(path, &failed)?;
    }
    Ok(json!({"command": "synth parse", "parsed": parsed.len(), "unparseable": failed.len()}))
}

fn refresh(a: RefreshArgs) -> Result<Value> {
    let schedule = plan_refresh(a.total_steps, a.interval).map_err(|e| usage(e.to_string()))?;
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let (index, _) = open_index(&a.source)?;
    let queries: HashMap<String, QueryEmbedding> = queries_for(&index, &a.query_embeddings)?.into_iter().collect();
    let retrieve = |id: &str| -> clir::Result<ScoreList> {
        let q = queries.get(id).ok_or_else(|| clir::Error::MissingEmbedding(id.to_string()))?;
        search_topk(&index, q, a.k)
    };
    let state = match &a.state {
        Some(path) => TrainingSetState::load_checkpoint(path)?,
        None => {
            let mut ids: Vec<String> = queries.keys().cloned().collect();
            ids.sort();
            TrainingSetState::initial_fill(&ids, retrieve, a.k)?
        }
    };
    let start = state.generation();
    let (state, events) = run_schedule(state, &schedule, retrieve, a.k, |_, s| {
        if let Some(dir) = &a.checkpoint_dir {
            let path = dir.join(format!("state-{}.jsonl", s.generation()));
            output::write_bytes(&path, &s.to_jsonl()?).map_err(|e| clir::Error::InvalidArgument(e.to_string()))?;
        }
        Ok(())
    })
    .map_err(|f| anyhow::anyhow!("{f}; state left at generation {}", f.state.generation()))?;
    output::write_bytes(&a.out, &state.to_jsonl()?)?;
    Ok(json!({
        "command": "refresh",
        "queries": state.len(),
        "start_generation": start,
        "generation": state.generation(),
        "refresh_steps": events.iter().map(|e| e.step).collect::<Vec<_>>(),
    }))
}

#[derive(Debug, Deserialize)]
struct PredictionRecord {
    id: String,
    text: String,
}

#[derive(Debug, Serialize)]
struct RecallSummary {
    budget_tokens: usize,
    per_language: BTreeMap<String, f64>,
    macro_average: f64,
}

fn eval(a: EvalArgs) -> Result<Value> {
    if a.budget.iter().any(|&b| b == 0) || a.top_n == 0 {
        return Err(usage("--budget and --top-n must be positive"));
    }
    let corpus = corpus(&a.corpus, a.max_tokens)?;
    let queries = load_queries(&a.queries)?;
    let ranked: HashMap<String, ScoreList> = read_jsonl::<RankedRecord>(&a.ranked)?
        .into_iter()
        .map(|r| Ok((r.query_id.clone(), r.score_list()?)))
        .collect::<Result<_>>()?;
    let mut metrics = MetricReport::default();
    let mut recall = Vec::new();
    for &budget in &a.budget {
        let slices: HashMap<String, TokenSlice> = queries
            .iter()
            .map(|q| {
                let list = ranked
                    .get(&q.id)
                    .ok_or_else(|| anyhow::anyhow!("no ranking for query `{}`", q.id))?;
                Ok((q.id.clone(), token_budget_slice(list, &corpus, budget)?))
            })
            .collect::<Result<_>>()?;
        let r = recall_at_tokens(&queries, &slices, &corpus, budget)?;
        metrics.add_token_recall(&r)?;
        recall.push(RecallSummary {
            budget_tokens: budget,
            macro_average: clir::evalkit::macro_average(&r.per_language)?,
            per_language: r.per_language,
        });
    }
    let passage_recall = recall_at_passages_by_language(&queries, &ranked, &corpus, a.top_n)?;
    metrics.add_passage_recall(&passage_recall)?;
    let qa = match &a.predictions {
        Some(path) => {
            let preds: HashMap<String, String> = read_jsonl::<PredictionRecord>(path)?
                .into_iter()
                .map(|p| (p.id, p.text))
                .collect();
            let m = qa_metrics(&preds, &queries)?;
            metrics.add_qa(&m)?;
            Some(m)
        }
        None => None,
    };
    let report = json!({
        "queries": queries.len(),
        "recall": recall,
        "passage_recall": passage_recall,
        "qa": qa,
        "metrics": metrics,
    });
    output::write_json(&a.out, &report)?;
    let table = metrics.to_table();
    if let Some(path) = &a.table_out {
        output::write_bytes(path, table.as_bytes())?;
    }
    Ok(json!({"command": "eval", "queries": queries.len(), "table": table}))
}
