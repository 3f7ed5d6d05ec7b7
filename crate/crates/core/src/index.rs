//! Searchable passage indexes, an exhaustive reference search, and
//! token-budget slicing of ranked lists.
//!
//! Every search orders hits by score descending, then passage id ascending.
//!
//! Multi-vector search is exact. Candidates are ranked by an upper bound
//! built from each passage's mean-pooled head rows (centroid `c`) and the
//! radius `r` of its rows around that centroid:
//!
//! ```text
//! q_i . d_j = q_i . c + q_i . (d_j - c) <= q_i . c + |q_i| r
//! s(q, d)  <= (sum_i q_i) . c + r sum_i |q_i|
//! ```
//!
//! The top `10 k` candidates by bound are rescored exactly; scoring then
//! continues down the bound order until no remaining bound can reach the
//! current k-th score.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embedding::{dot, dot_f64, DenseVector, MultiVectorEmbedding};
use crate::error::{Error, Result};
use crate::scoring::{dense_score, multi_vector_score, PreparedQuery, ScoreList};
use crate::tensor::{load_tensor_bundle, TensorBundle, TensorEntry};
use crate::tokenize::token_prefix;

pub const ROLE_PASSAGE_DENSE: &str = "passage_dense";
pub const ROLE_PASSAGE_MULTI: &str = "passage_multi";
pub const ROLE_PASSAGE_MASK: &str = "passage_mask";
pub const ROLE_QUERY_DENSE: &str = "query_dense";
pub const ROLE_QUERY_MULTI: &str = "query_multi";
pub const ROLE_QUERY_MASK: &str = "query_mask";

/// Candidates rescored exactly per requested hit before bound pruning.
pub const RERANK_FACTOR: usize = 10;
const DENSE_BLOCK: usize = 4096;
const INDEX_META_FILE: &str = "index.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexMode {
    Dense,
    MultiVector,
}

impl std::str::FromStr for IndexMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(IndexMode::Dense),
            "multi-vector" | "multi_vector" | "mv" => Ok(IndexMode::MultiVector),
            other => Err(Error::invalid(format!("unknown index mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for IndexMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IndexMode::Dense => "dense",
            IndexMode::MultiVector => "multi-vector",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryEmbedding {
    Dense(DenseVector),
    MultiVector(MultiVectorEmbedding),
}

impl QueryEmbedding {
    pub fn mode(&self) -> IndexMode {
        match self {
            QueryEmbedding::Dense(_) => IndexMode::Dense,
            QueryEmbedding::MultiVector(_) => IndexMode::MultiVector,
        }
    }
}

/// Passage embeddings keyed by id, as read from a tensor bundle.
#[derive(Debug, Clone, PartialEq)]
pub enum PassageEmbeddings {
    Dense {
        ids: Vec<String>,
        vectors: Vec<DenseVector>,
    },
    MultiVector {
        ids: Vec<String>,
        embeddings: Vec<MultiVectorEmbedding>,
    },
}

impl PassageEmbeddings {
    pub fn mode(&self) -> IndexMode {
        match self {
            PassageEmbeddings::Dense { .. } => IndexMode::Dense,
            PassageEmbeddings::MultiVector { .. } => IndexMode::MultiVector,
        }
    }

    pub fn ids(&self) -> &[String] {
        match self {
            PassageEmbeddings::Dense { ids, .. } | PassageEmbeddings::MultiVector { ids, .. } => ids,
        }
    }

    pub fn len(&self) -> usize {
        self.ids().len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids().is_empty()
    }

    pub fn from_bundle(bundle: &TensorBundle, mode: IndexMode) -> Result<Self> {
        match mode {
            IndexMode::Dense => {
                let (ids, vectors) = dense_rows(bundle, ROLE_PASSAGE_DENSE)?;
                Ok(PassageEmbeddings::Dense { ids, vectors })
            }
            IndexMode::MultiVector => {
                let (ids, embeddings) = multi_rows(bundle, ROLE_PASSAGE_MULTI, ROLE_PASSAGE_MASK)?;
                Ok(PassageEmbeddings::MultiVector { ids, embeddings })
            }
        }
    }

    /// Pack into a bundle using the passage roles. Multi-vector rows are
    /// padded to the longest token count with a mask array.
    pub fn to_bundle(&self) -> Result<TensorBundle> {
        let mut bundle = TensorBundle::new();
        match self {
            PassageEmbeddings::Dense { ids, vectors } => {
                insert_dense(&mut bundle, "passages", ROLE_PASSAGE_DENSE, ids, vectors)?
            }
            PassageEmbeddings::MultiVector { ids, embeddings } => insert_multi(
                &mut bundle,
                "passages",
                ROLE_PASSAGE_MULTI,
                ROLE_PASSAGE_MASK,
                ids,
                embeddings,
            )?,
        }
        Ok(bundle)
    }
}

/// Query embeddings in bundle order.
pub fn query_embeddings_from_bundle(
    bundle: &TensorBundle,
    mode: IndexMode,
) -> Result<Vec<(String, QueryEmbedding)>> {
    Ok(match mode {
        IndexMode::Dense => {
            let (ids, rows) = dense_rows(bundle, ROLE_QUERY_DENSE)?;
            ids.into_iter().zip(rows.into_iter().map(QueryEmbedding::Dense)).collect()
        }
        IndexMode::MultiVector => {
            let (ids, rows) = multi_rows(bundle, ROLE_QUERY_MULTI, ROLE_QUERY_MASK)?;
            ids.into_iter()
                .zip(rows.into_iter().map(QueryEmbedding::MultiVector))
                .collect()
        }
    })
}

pub fn insert_dense(
    bundle: &mut TensorBundle,
    name: &str,
    role: &str,
    ids: &[String],
    vectors: &[DenseVector],
) -> Result<()> {
    let dim = vectors.first().map_or(0, DenseVector::dim);
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch {
            left: v.dim(),
            right: dim,
        });
    }
    let data = vectors.iter().flat_map(|v| v.values().iter().copied()).collect();
    bundle.insert(
        TensorEntry::new(name, vec![vectors.len(), dim], role).with_ids(ids.to_vec()),
        data,
    )
}

pub fn insert_multi(
    bundle: &mut TensorBundle,
    name: &str,
    role: &str,
    mask_role: &str,
    ids: &[String],
    embeddings: &[MultiVectorEmbedding],
) -> Result<()> {
    let Some(first) = embeddings.first() else {
        return bundle.insert(TensorEntry::new(name, vec![0, 0, 0, 0], role).with_ids(vec![]), vec![]);
    };
    let (heads, dim) = (first.head_count(), first.dim());
    let max_t = embeddings.iter().map(|e| e.token_count()).max().unwrap_or(0);
    let mut data = Vec::with_capacity(embeddings.len() * heads * max_t * dim);
    let mut mask = Vec::with_capacity(embeddings.len() * max_t);
    for e in embeddings {
        if e.head_count() != heads || e.dim() != dim {
            return Err(Error::invalid("multi-vector embeddings differ in head count or dim"));
        }
        let t = e.token_count();
        for h in 0..heads {
            let head = &e.data()[h * t * dim..(h + 1) * t * dim];
            data.extend_from_slice(head);
            data.extend(std::iter::repeat_n(0.0, (max_t - t) * dim));
        }
        mask.extend(e.pad_mask().iter().map(|&m| if m { 1.0 } else { 0.0 }));
        mask.extend(std::iter::repeat_n(0.0, max_t - t));
    }
    let n = embeddings.len();
    bundle.insert(
        TensorEntry::new(name, vec![n, heads, max_t, dim], role).with_ids(ids.to_vec()),
        data,
    )?;
    bundle.insert(
        TensorEntry::new(format!("{name}_mask"), vec![n, max_t], mask_role).with_ids(ids.to_vec()),
        mask,
    )
}

fn row_ids(entry: &TensorEntry, rows: usize) -> Vec<String> {
    entry
        .ids
        .clone()
        .unwrap_or_else(|| (0..rows).map(|i| i.to_string()).collect())
}

fn dense_rows(bundle: &TensorBundle, role: &str) -> Result<(Vec<String>, Vec<DenseVector>)> {
    let t = bundle
        .by_role(role)
        .ok_or_else(|| Error::MissingArray(role.to_string()))?;
    let [n, dim] = t.shape() else {
        return Err(Error::invalid(format!(
            "array `{}` ({role}) must be 2-d, got shape {:?}",
            t.entry.name,
            t.shape()
        )));
    };
    let vectors = if *n == 0 {
        Vec::new()
    } else {
        t.data
            .chunks_exact(*dim)
            .map(|c| DenseVector::new(c.to_vec()))
            .collect::<Result<_>>()?
    };
    Ok((row_ids(&t.entry, *n), vectors))
}

fn multi_rows(
    bundle: &TensorBundle,
    role: &str,
    mask_role: &str,
) -> Result<(Vec<String>, Vec<MultiVectorEmbedding>)> {
    let t = bundle
        .by_role(role)
        .ok_or_else(|| Error::MissingArray(role.to_string()))?;
    let [n, heads, tokens, dim] = t.shape() else {
        return Err(Error::invalid(format!(
            "array `{}` ({role}) must be 4-d [n, heads, tokens, dim], got {:?}",
            t.entry.name,
            t.shape()
        )));
    };
    let (n, heads, tokens, dim) = (*n, *heads, *tokens, *dim);
    let mask = bundle.by_role(mask_role);
    if let Some(m) = mask {
        if m.shape() != [n, tokens] {
            return Err(Error::invalid(format!(
                "mask `{}` must have shape [{n}, {tokens}], got {:?}",
                m.entry.name,
                m.shape()
            )));
        }
    }
    let per = heads * tokens * dim;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let pad_mask = match mask {
            Some(m) => m.data[i * tokens..(i + 1) * tokens].iter().map(|&v| v != 0.0).collect(),
            None => vec![true; tokens],
        };
        out.push(MultiVectorEmbedding::new(
            heads,
            tokens,
            dim,
            t.data[i * per..(i + 1) * per].to_vec(),
            pad_mask,
        )?);
    }
    Ok((row_ids(&t.entry, n), out))
}

#[derive(Debug, Clone, PartialEq)]
enum Store {
    Dense {
        dim: usize,
        data: Vec<f32>,
    },
    MultiVector {
        head_index: usize,
        embeddings: Vec<MultiVectorEmbedding>,
        centroids: Vec<f64>,
        radii: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    ids: Vec<String>,
    store: Store,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexMeta {
    mode: IndexMode,
    head_index: Option<usize>,
    size: usize,
}

/// Build an index over `corpus` in corpus order from the embeddings in
/// `bundle`.
pub fn build_index(
    corpus: &Corpus,
    bundle: &TensorBundle,
    mode: IndexMode,
    head_index: usize,
) -> Result<RetrievalIndex> {
    let embeddings = PassageEmbeddings::from_bundle(bundle, mode)?;
    build_index_from(corpus, embeddings, head_index)
}

pub fn build_index_from(
    corpus: &Corpus,
    embeddings: PassageEmbeddings,
    head_index: usize,
) -> Result<RetrievalIndex> {
    let rows: HashMap<&str, usize> = embeddings
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let order = corpus
        .passages()
        .iter()
        .map(|p| {
            rows.get(p.id.as_str())
                .copied()
                .ok_or_else(|| Error::MissingEmbedding(p.id.clone()))
        })
        .collect::<Result<Vec<usize>>>()?;
    let ids: Vec<String> = corpus.passages().iter().map(|p| p.id.clone()).collect();
    match embeddings {
        PassageEmbeddings::Dense { vectors, .. } => {
            let dim = vectors.first().map_or(0, DenseVector::dim);
            let mut data = Vec::with_capacity(order.len() * dim);
            for &r in &order {
                let v = &vectors[r];
                if v.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        left: v.dim(),
                        right: dim,
                    });
                }
                data.extend_from_slice(v.values());
            }
            Ok(RetrievalIndex {
                ids,
                store: Store::Dense { dim, data },
            })
        }
        PassageEmbeddings::MultiVector { embeddings, .. } => {
            let mut slots: Vec<Option<MultiVectorEmbedding>> =
                embeddings.into_iter().map(Some).collect();
            let picked = order
                .iter()
                .zip(&ids)
                .map(|(&r, id)| slots[r].take().ok_or_else(|| Error::DuplicateId(id.clone())))
                .collect::<Result<Vec<_>>>()?;
            RetrievalIndex::multi_vector(ids, picked, head_index)
        }
    }
}

impl RetrievalIndex {
    pub fn dense(ids: Vec<String>, vectors: &[DenseVector]) -> Result<Self> {
        check_unique(&ids)?;
        if ids.len() != vectors.len() {
            return Err(Error::DimensionMismatch {
                left: ids.len(),
                right: vectors.len(),
            });
        }
        let dim = vectors.first().map_or(0, DenseVector::dim);
        let mut data = Vec::with_capacity(vectors.len() * dim);
        for v in vectors {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: v.dim(),
                    right: dim,
                });
            }
            data.extend_from_slice(v.values());
        }
        Ok(Self {
            ids,
            store: Store::Dense { dim, data },
        })
    }

    pub fn multi_vector(
        ids: Vec<String>,
        embeddings: Vec<MultiVectorEmbedding>,
        head_index: usize,
    ) -> Result<Self> {
        check_unique(&ids)?;
        if ids.len() != embeddings.len() {
            return Err(Error::DimensionMismatch {
                left: ids.len(),
                right: embeddings.len(),
            });
        }
        let dim = embeddings.first().map_or(0, MultiVectorEmbedding::dim);
        let mut centroids = Vec::with_capacity(embeddings.len() * dim);
        let mut radii = Vec::with_capacity(embeddings.len());
        for e in &embeddings {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: e.dim(),
                    right: dim,
                });
            }
            let head = e.head(head_index)?;
            let mut c = vec![0f64; dim];
            let mut n = 0usize;
            for row in head.rows() {
                n += 1;
                for (acc, &v) in c.iter_mut().zip(row) {
                    *acc += v as f64;
                }
            }
            for acc in &mut c {
                *acc /= n as f64;
            }
            let r = head
                .rows()
                .map(|row| {
                    row.iter()
                        .zip(&c)
                        .map(|(&v, m)| (v as f64 - m).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0f64, f64::max);
            centroids.extend(c);
            radii.push(r);
        }
        Ok(Self {
            ids,
            store: Store::MultiVector {
                head_index,
                embeddings,
                centroids,
                radii,
            },
        })
    }

    pub fn mode(&self) -> IndexMode {
        match self.store {
            Store::Dense { .. } => IndexMode::Dense,
            Store::MultiVector { .. } => IndexMode::MultiVector,
        }
    }

    pub fn head_index(&self) -> Option<usize> {
        match self.store {
            Store::Dense { .. } => None,
            Store::MultiVector { head_index, .. } => Some(head_index),
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The passage embeddings this index was built from, in index order.
    pub fn passage_embeddings(&self) -> PassageEmbeddings {
        match &self.store {
            Store::Dense { dim, data } => PassageEmbeddings::Dense {
                ids: self.ids.clone(),
                vectors: data
                    .chunks_exact((*dim).max(1))
                    .map(|c| DenseVector::new(c.to_vec()).expect("validated at build"))
                    .collect(),
            },
            Store::MultiVector { embeddings, .. } => PassageEmbeddings::MultiVector {
                ids: self.ids.clone(),
                embeddings: embeddings.clone(),
            },
        }
    }

    /// Persist as a tensor bundle directory plus `index.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.passage_embeddings().to_bundle()?.save(dir)?;
        let meta = IndexMeta {
            mode: self.mode(),
            head_index: self.head_index(),
            size: self.len(),
        };
        let path = dir.join(INDEX_META_FILE);
        fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n")
            .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_META_FILE);
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: IndexMeta = serde_json::from_str(&raw)?;
        let bundle = load_tensor_bundle(dir)?;
        let index = match PassageEmbeddings::from_bundle(&bundle, meta.mode)? {
            PassageEmbeddings::Dense { ids, vectors } => Self::dense(ids, &vectors)?,
            PassageEmbeddings::MultiVector { ids, embeddings } => {
                Self::multi_vector(ids, embeddings, meta.head_index.unwrap_or(0))?
            }
        };
        if index.len() != meta.size {
            return Err(Error::SizeMismatch {
                name: "index".into(),
                expected: meta.size,
                found: index.len(),
            });
        }
        Ok(index)
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

/// Heap entry ordered so that the worst hit is the maximum.
#[derive(Debug, Clone, Copy)]
struct Hit<'a> {
    score: f64,
    id: &'a str,
}

impl Ord for Hit<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Hit<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Hit<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Hit<'_> {}

struct TopK<'a> {
    k: usize,
    heap: BinaryHeap<Hit<'a>>,
}

impl<'a> TopK<'a> {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn push(&mut self, hit: Hit<'a>) {
        if self.heap.len() < self.k {
            self.heap.push(hit);
        } else if let Some(worst) = self.heap.peek() {
            if hit < *worst {
                self.heap.pop();
                self.heap.push(hit);
            }
        }
    }

    fn threshold(&self) -> Option<f64> {
        (self.heap.len() == self.k).then(|| self.heap.peek().map(|h| h.score)).flatten()
    }

    fn merge(mut self, other: TopK<'a>) -> Self {
        for h in other.heap {
            self.push(h);
        }
        self
    }

    fn into_score_list(self) -> ScoreList {
        let hits = self.heap.into_sorted_vec();
        ScoreList::new(
            hits.iter().map(|h| h.id.to_string()).collect(),
            hits.iter().map(|h| h.score).collect(),
        )
        .expect("finite scores")
    }
}

/// The `k` best passages for `query`.
pub fn search_topk(index: &RetrievalIndex, query: &QueryEmbedding, k: usize) -> Result<ScoreList> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    match (&index.store, query) {
        (Store::Dense { dim, data }, QueryEmbedding::Dense(q)) => {
            if index.is_empty() {
                return Ok(ScoreList::default());
            }
            if q.dim() != *dim {
                return Err(Error::DimensionMismatch {
                    left: q.dim(),
                    right: *dim,
                });
            }
            let qv = q.values();
            let top = data
                .par_chunks(DENSE_BLOCK * dim)
                .enumerate()
                .map(|(b, block)| {
                    let mut top = TopK::new(k);
                    for (i, row) in block.chunks_exact(*dim).enumerate() {
                        top.push(Hit {
                            score: dot(qv, row),
                            id: &index.ids[b * DENSE_BLOCK + i],
                        });
                    }
                    top
                })
                .reduce(|| TopK::new(k), TopK::merge);
            Ok(top.into_score_list())
        }
        (
            Store::MultiVector {
                head_index,
                embeddings,
                centroids,
                radii,
            },
            QueryEmbedding::MultiVector(q),
        ) => {
            if index.is_empty() {
                return Ok(ScoreList::default());
            }
            let prepared = PreparedQuery::new(q, *head_index)?;
            let dim = prepared.dim();
            if dim != embeddings[0].dim() {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: embeddings[0].dim(),
                });
            }
            let mut qsum = vec![0f64; dim];
            let mut qnorm = 0f64;
            for row in prepared.rows() {
                for (s, v) in qsum.iter_mut().zip(row) {
                    *s += v;
                }
                qnorm += dot_f64(row, row).sqrt();
            }
            let mut bounds: Vec<(f64, usize)> = centroids
                .chunks_exact(dim)
                .zip(radii)
                .enumerate()
                .map(|(i, (c, r))| (dot_f64(&qsum, c) + r * qnorm, i))
                .collect();
            bounds.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

            let mut top = TopK::new(k);
            let first = (k.saturating_mul(RERANK_FACTOR)).min(bounds.len());
            let scored: Vec<Result<Hit>> = bounds[..first]
                .par_iter()
                .map(|&(_, i)| {
                    Ok(Hit {
                        score: prepared.score(&embeddings[i])?,
                        id: &index.ids[i],
                    })
                })
                .collect();
            for hit in scored {
                top.push(hit?);
            }
            for &(bound, i) in &bounds[first..] {
                if let Some(t) = top.threshold() {
                    if bound + 1e-9 * (1.0 + bound.abs()) < t {
                        break;
                    }
                }
                top.push(Hit {
                    score: prepared.score(&embeddings[i])?,
                    id: &index.ids[i],
                });
            }
            Ok(top.into_score_list())
        }
        _ => Err(Error::invalid(format!(
            "query embedding is {} but index is {}",
            query.mode(),
            index.mode()
        ))),
    }
}

/// Exhaustive scoring of every passage; the reference for [`search_topk`].
pub fn brute_force_topk(
    embeddings: &PassageEmbeddings,
    query: &QueryEmbedding,
    k: usize,
    head_index: usize,
) -> Result<ScoreList> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut scored: Vec<(f64, &str)> = match (embeddings, query) {
        (PassageEmbeddings::Dense { ids, vectors }, QueryEmbedding::Dense(q)) => vectors
            .iter()
            .zip(ids)
            .map(|(v, id)| Ok((dense_score(q, v)?, id.as_str())))
            .collect::<Result<_>>()?,
        (PassageEmbeddings::MultiVector { ids, embeddings }, QueryEmbedding::MultiVector(q)) => {
            embeddings
                .iter()
                .zip(ids)
                .map(|(e, id)| Ok((multi_vector_score(q, e, head_index)?, id.as_str())))
                .collect::<Result<_>>()?
        }
        _ => {
            return Err(Error::invalid(format!(
                "query embedding is {} but passages are {}",
                query.mode(),
                embeddings.mode()
            )))
        }
    };
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.truncate(k);
    ScoreList::new(
        scored.iter().map(|(_, id)| id.to_string()).collect(),
        scored.iter().map(|(s, _)| *s).collect(),
    )
}

/// Exact late-interaction rescoring of a candidate set.
pub fn rerank(
    query: &MultiVectorEmbedding,
    candidates: &[(&str, &MultiVectorEmbedding)],
    head_index: usize,
) -> Result<ScoreList> {
    let prepared = PreparedQuery::new(query, head_index)?;
    let scored = candidates
        .par_iter()
        .map(|(id, e)| Ok((prepared.score(e)?, *id)))
        .collect::<Result<Vec<_>>>()?;
    let mut scored = scored;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    ScoreList::new(
        scored.iter().map(|(_, id)| id.to_string()).collect(),
        scored.iter().map(|(s, _)| *s).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub id: String,
    pub tokens: usize,
}

/// Rank-ordered passage prefixes filling a token budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSlice {
    pub entries: Vec<SliceEntry>,
    pub total_tokens: usize,
    pub budget: usize,
}

impl TokenSlice {
    /// Included prefixes joined by single spaces.
    pub fn text(&self, corpus: &Corpus) -> Result<String> {
        let mut parts = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let p = corpus.require(&e.id)?;
            parts.push(token_prefix(&p.text, e.tokens));
        }
        Ok(parts.join(" "))
    }
}

/// Greedy fill of `budget_tokens` in rank order; the last passage may be cut.
pub fn token_budget_slice(
    ranked: &ScoreList,
    corpus: &Corpus,
    budget_tokens: usize,
) -> Result<TokenSlice> {
    if budget_tokens == 0 {
        return Err(Error::invalid("token budget must be at least 1"));
    }
    let mut entries = Vec::new();
    let mut remaining = budget_tokens;
    for id in ranked.ids() {
        let p = corpus.require(id)?;
        if remaining == 0 {
            break;
        }
        let take = p.token_count.min(remaining);
        if take == 0 {
            continue;
        }
        entries.push(SliceEntry {
            id: id.clone(),
            tokens: take,
        });
        remaining -= take;
    }
    Ok(TokenSlice {
        entries,
        total_tokens: budget_tokens - remaining,
        budget: budget_tokens,
    })
}
