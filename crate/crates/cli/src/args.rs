use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use clir::distill::DEFAULT_LOSS_ALPHA;
use clir::evalkit::DEFAULT_TOP_N;
use clir::index::IndexMode;
use clir::mining::{DEFAULT_KNN, DEFAULT_PLACEHOLDER, DEFAULT_SAMPLING_ALPHA};
use clir::pipeline::{DEFAULT_PASSAGES_PER_QUERY, DEFAULT_REFRESH_INTERVAL};
use clir::scoring::{DEFAULT_HEAD_INDEX, DEFAULT_TEMPERATURE};
use clir::synth::DEFAULT_META_EXAMPLES;

#[derive(Debug, Parser)]
#[command(
    name = "clir",
    version,
    about = "Cross-lingual retrieval data factory: mining, indexing, retrieval, training targets, prompt synthesis, refresh scheduling and evaluation"
)]
pub struct Cli {
    /// JSON file supplying flag values (top-level keys, or a section per subcommand); explicit flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads [default: available cores]
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Log progress to stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine parallel sentence pairs with cloze answers from per-page sentence pools
    Mine(MineArgs),
    /// Build a search index over a passage corpus
    Index(IndexArgs),
    /// Rank passages for every query; optionally cut token-budget slices
    Retrieve(RetrieveArgs),
    /// Compute relevance targets and losses from a tensor bundle
    Targets(TargetsArgs),
    /// Build question-generation prompts from anchors, or parse model responses
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Run the scheduled passage refreshes over a training set
    Refresh(RefreshArgs),
    /// Score rankings and predictions: recall at token budgets, recall by answer language, F1/EM/BLEU
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Sentence JSONL: {id, page, lang, text, entities: [{start, end, label}]}
    #[arg(long, value_name = "FILE")]
    pub sentences: PathBuf,

    /// Tensor bundle with a `sentence_dense` array [n, dim] whose ids are sentence ids
    #[arg(long, value_name = "DIR")]
    pub embeddings: PathBuf,

    /// Output JSONL of mined pairs
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Neighbours averaged in the margin denominator
    #[arg(long, default_value_t = DEFAULT_KNN)]
    pub k: usize,

    /// Margin threshold for every language [default: 1.5, or 1.65 for ja and zh]
    #[arg(long)]
    pub threshold: Option<f64>,

    /// Text replacing the answer in cloze sentences
    #[arg(long, default_value = DEFAULT_PLACEHOLDER)]
    pub placeholder: String,

    /// Language code of the pivot (English) sentences
    #[arg(long, default_value = "en")]
    pub pivot_lang: String,

    /// Draw a language-balanced subset of this many pairs
    #[arg(long, requires = "sample_out")]
    pub sample_total: Option<u64>,

    /// Smoothing exponent of the balanced sampler
    #[arg(long, default_value_t = DEFAULT_SAMPLING_ALPHA)]
    pub sample_alpha: f64,

    /// Output JSONL of the balanced subset
    #[arg(long, value_name = "FILE", requires = "sample_total")]
    pub sample_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Passage JSONL: {id, lang, title, text, token_count?}
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,

    /// Tensor bundle with passage embeddings (`passage_dense` or `passage_multi`)
    #[arg(long, value_name = "DIR")]
    pub embeddings: PathBuf,

    /// Index mode: dense or multi-vector
    #[arg(long, default_value = "multi-vector")]
    pub mode: IndexMode,

    /// Attention head used for multi-vector scoring
    #[arg(long, default_value_t = DEFAULT_HEAD_INDEX)]
    pub head_index: usize,

    /// Passage length cap in tokens
    #[arg(long, default_value_t = clir::corpus::DEFAULT_PASSAGE_MAX_TOKENS)]
    pub max_tokens: usize,

    /// Output index directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Where the searched index comes from: a saved directory, or built on the fly.
#[derive(Debug, Args)]
pub struct IndexSource {
    /// Saved index directory
    #[arg(long, value_name = "DIR", conflicts_with = "embeddings")]
    pub index: Option<PathBuf>,

    /// Passage JSONL (to build an index, or to cut token-budget slices)
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,

    /// Passage embedding bundle to build an index from (with --corpus)
    #[arg(long, value_name = "DIR", requires = "corpus")]
    pub embeddings: Option<PathBuf>,

    /// Index mode when building: dense or multi-vector [default: multi-vector]
    #[arg(long)]
    pub mode: Option<IndexMode>,

    /// Attention head when building a multi-vector index
    #[arg(long, default_value_t = DEFAULT_HEAD_INDEX)]
    pub head_index: usize,

    /// Passage length cap in tokens
    #[arg(long, default_value_t = clir::corpus::DEFAULT_PASSAGE_MAX_TOKENS)]
    pub max_tokens: usize,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub source: IndexSource,

    /// Tensor bundle with query embeddings (`query_dense` or `query_multi`)
    #[arg(long, value_name = "DIR")]
    pub query_embeddings: PathBuf,

    /// Passages returned per query
    #[arg(long, default_value_t = DEFAULT_PASSAGES_PER_QUERY)]
    pub k: usize,

    /// Output JSONL: {query_id, passages: [{id, score}]}
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Token budget for slices (needs --corpus and --slices-out)
    #[arg(long, requires_all = ["corpus", "slices_out"])]
    pub budget: Option<usize>,

    /// Output JSONL of token-budget slices
    #[arg(long, value_name = "FILE", requires = "budget")]
    pub slices_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TargetsArgs {
    /// Tensor bundle. Stage 2 reads roles `cross_attention` [heads, tokens] (ids + offsets),
    /// `retrieval_scores` [n] (ids) and `answer_logprobs` [T]. Stage 1 reads `student_l_scores`,
    /// `student_en_scores`, `teacher_scores` [n] (ids), `answer_logprobs_en`, `answer_logprobs_l` [T]
    /// and optionally `answer_steps_en`, `answer_steps_l` [T, vocab]
    #[arg(long, value_name = "DIR")]
    pub bundle: PathBuf,

    /// Training stage: 1 (cross-lingual distillation) or 2 (end-to-end with cross-attention targets)
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,

    /// Weight of the distillation terms
    #[arg(long, default_value_t = DEFAULT_LOSS_ALPHA)]
    pub alpha: f64,

    /// Softmax temperature applied to retrieval scores
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,

    /// Output JSON with distributions and losses
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Prompts asking a strong model to rewrite cloze sentences (meta-example collection)
    MetaPrompts(MetaPromptArgs),
    /// Few-shot prompts rewriting cloze sentences into questions
    Prompts(PromptArgs),
    /// Extract questions from model responses
    Parse(ParseArgs),
}

#[derive(Debug, Args)]
pub struct AnchorInputs {
    /// Anchor JSONL: {id, lang, text, anchors: [{start, end, target}]} (character offsets)
    #[arg(long, value_name = "FILE")]
    pub anchors: PathBuf,

    /// Link-graph JSONL: {id, english_title, entity_type}
    #[arg(long, value_name = "FILE")]
    pub pages: PathBuf,

    /// Text replacing the answer in cloze sentences
    #[arg(long, default_value = DEFAULT_PLACEHOLDER)]
    pub placeholder: String,
}

#[derive(Debug, Args)]
pub struct MetaPromptArgs {
    #[command(flatten)]
    pub inputs: AnchorInputs,

    /// Output prompts JSONL
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[command(flatten)]
    pub inputs: AnchorInputs,

    /// Meta-example JSONL: {sentence, wh_word, answer, transformed_question, lang}
    #[arg(long, value_name = "FILE")]
    pub meta: PathBuf,

    /// Meta examples per prompt
    #[arg(long, default_value_t = DEFAULT_META_EXAMPLES)]
    pub meta_examples: usize,

    /// Prompts per example for a language, as LANG=N (repeatable) [default: 1 per language]
    #[arg(long, value_name = "LANG=N")]
    pub oversample: Vec<String>,

    /// Output prompts JSONL
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParseArgs {
    /// Response JSONL: {id, response}
    #[arg(long, value_name = "FILE")]
    pub responses: PathBuf,

    /// Output JSONL: {id, question}
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Output JSONL of responses that held no question: {id, error}
    #[arg(long, value_name = "FILE")]
    pub failures_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefreshArgs {
    #[command(flatten)]
    pub source: IndexSource,

    /// Tensor bundle with query embeddings (`query_dense` or `query_multi`)
    #[arg(long, value_name = "DIR")]
    pub query_embeddings: PathBuf,

    /// Starting state checkpoint JSONL; omitted means a fresh initial fill
    #[arg(long, value_name = "FILE")]
    pub state: Option<PathBuf>,

    /// Logical training steps to run
    #[arg(long)]
    pub total_steps: u64,

    /// Steps between refreshes
    #[arg(long, default_value_t = DEFAULT_REFRESH_INTERVAL)]
    pub interval: u64,

    /// Passages kept per query
    #[arg(long, default_value_t = DEFAULT_PASSAGES_PER_QUERY)]
    pub k: usize,

    /// Final state checkpoint JSONL
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Also checkpoint every refresh as DIR/state-<generation>.jsonl
    #[arg(long, value_name = "DIR")]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Passage JSONL
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,

    /// Query JSONL with gold answers: {id, lang, text, answers: {lang: [..]}}
    #[arg(long, value_name = "FILE")]
    pub queries: PathBuf,

    /// Ranked JSONL as written by `retrieve`
    #[arg(long, value_name = "FILE")]
    pub ranked: PathBuf,

    /// Token budgets for answer recall (repeatable)
    #[arg(long, default_values_t = [2000usize, 5000])]
    pub budget: Vec<usize>,

    /// Passages inspected for recall by answer language
    #[arg(long, default_value_t = DEFAULT_TOP_N)]
    pub top_n: usize,

    /// Prediction JSONL {id, text} for F1/EM/BLEU
    #[arg(long, value_name = "FILE")]
    pub predictions: Option<PathBuf>,

    /// Passage length cap in tokens
    #[arg(long, default_value_t = clir::corpus::DEFAULT_PASSAGE_MAX_TOKENS)]
    pub max_tokens: usize,

    /// Output report JSON
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Also write the plain-text table here
    #[arg(long, value_name = "FILE")]
    pub table_out: Option<PathBuf>,
}
