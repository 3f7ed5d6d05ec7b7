//! Passages, queries and their line-delimited JSON files.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl_file};
use crate::tokenize::{count_tokens, truncate_tokens};

pub const DEFAULT_PASSAGE_MAX_TOKENS: usize = 200;
pub const DEFAULT_QUERY_MAX_TOKENS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub lang: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub lang: String,
    pub text: String,
    /// Gold answers keyed by language code.
    #[serde(default)]
    pub answers: BTreeMap<String, Vec<String>>,
}

impl Query {
    pub fn all_answers(&self) -> impl Iterator<Item = &str> {
        self.answers.values().flatten().map(String::as_str)
    }

    pub fn answers_in(&self, lang: &str) -> &[String] {
        self.answers.get(lang).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub source: PathBuf,
    pub passages: usize,
    pub total_tokens: usize,
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    passages: Vec<Passage>,
    manifest: CorpusManifest,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_passages(passages: Vec<Passage>, source: impl Into<PathBuf>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(p.id.clone()));
            }
        }
        let manifest = CorpusManifest {
            source: source.into(),
            passages: passages.len(),
            total_tokens: passages.iter().map(|p| p.token_count).sum(),
            truncated: 0,
        };
        Ok(Self {
            passages,
            manifest,
            by_id,
        })
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<&Passage> {
        self.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_jsonl_file(path, &self.passages)
    }
}

#[derive(Debug, Deserialize)]
struct PassageRecord {
    id: String,
    lang: String,
    #[serde(default)]
    title: String,
    text: String,
    token_count: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Truncate texts to this many tokens; `None` disables truncation.
    pub max_tokens: Option<usize>,
}

impl LoadOptions {
    pub fn passages() -> Self {
        Self {
            max_tokens: Some(DEFAULT_PASSAGE_MAX_TOKENS),
        }
    }

    pub fn queries() -> Self {
        Self {
            max_tokens: Some(DEFAULT_QUERY_MAX_TOKENS),
        }
    }
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    load_corpus_with(path, LoadOptions::passages())
}

/// Load a passage JSONL file.
///
/// A supplied `token_count` must agree with the tokenizer's count of the
/// untruncated text; after truncation it is reset to the truncated count.
pub fn load_corpus_with(path: &Path, options: LoadOptions) -> Result<Corpus> {
    let records: Vec<PassageRecord> = read_jsonl(path)?;
    let mut truncated = 0;
    let mut passages = Vec::with_capacity(records.len());
    for (line, r) in records.into_iter().enumerate() {
        let full = count_tokens(&r.text);
        if let Some(declared) = r.token_count {
            if declared != full {
                return Err(Error::MalformedRecord {
                    path: path.to_path_buf(),
                    line: line + 1,
                    message: format!(
                        "passage `{}` declares token_count {declared} but text has {full} tokens",
                        r.id
                    ),
                });
            }
        }
        let (text, token_count) = match options.max_tokens {
            Some(max) if full > max => {
                truncated += 1;
                (truncate_tokens(&r.text, max).to_string(), max)
            }
            _ => (r.text, full),
        };
        passages.push(Passage {
            id: r.id,
            lang: r.lang,
            title: r.title,
            text,
            token_count,
        });
    }
    let mut corpus = Corpus::from_passages(passages, path)?;
    corpus.manifest.truncated = truncated;
    Ok(corpus)
}

pub fn load_queries(path: &Path) -> Result<Vec<Query>> {
    load_queries_with(path, LoadOptions::queries())
}

pub fn load_queries_with(path: &Path, options: LoadOptions) -> Result<Vec<Query>> {
    let mut queries: Vec<Query> = read_jsonl(path)?;
    let mut seen = HashMap::with_capacity(queries.len());
    for (i, q) in queries.iter_mut().enumerate() {
        if q.text.trim().is_empty() {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("query `{}` has empty text", q.id),
            });
        }
        if seen.insert(q.id.clone(), i).is_some() {
            return Err(Error::DuplicateId(q.id.clone()));
        }
        if let Some(max) = options.max_tokens {
            let cut = truncate_tokens(&q.text, max);
            if cut.len() != q.text.len() {
                q.text = cut.to_string();
            }
        }
    }
    Ok(queries)
}

pub fn write_queries(path: &Path, queries: &[Query]) -> Result<()> {
    write_jsonl_file(path, queries)
}
