//! Periodic refresh of the passages retrieved for each training query.
//!
//! Training steps are logical ticks: a schedule lists the steps at which every
//! query's passage list is recomputed with the current retriever. A refresh
//! cycle is all-or-nothing.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_jsonl;
use crate::scoring::ScoreList;

pub const DEFAULT_REFRESH_INTERVAL: u64 = 1000;
pub const DEFAULT_PASSAGES_PER_QUERY: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshSchedule {
    pub total_steps: u64,
    pub interval: u64,
    pub refresh_steps: Vec<u64>,
}

/// Refresh points `interval, 2·interval, …` up to `total_steps`.
pub fn plan_refresh(total_steps: u64, interval: u64) -> Result<RefreshSchedule> {
    if total_steps == 0 || interval == 0 {
        return Err(Error::invalid("total_steps and interval must be positive"));
    }
    let refresh_steps = (1..=total_steps / interval).map(|i| i * interval).collect();
    Ok(RefreshSchedule {
        total_steps,
        interval,
        refresh_steps,
    })
}

/// One query's retrieved passages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPassages {
    pub query_id: String,
    pub passage_ids: Vec<String>,
}

/// Retrieved passages for every training query, in a fixed query order.
///
/// Generation 0 is the initial fill; each applied refresh adds one.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainingSetState {
    entries: Vec<QueryPassages>,
    generation: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointRecord {
    query_id: String,
    passage_ids: Vec<String>,
    generation: u64,
}

impl TrainingSetState {
    pub fn new(entries: Vec<QueryPassages>, generation: u64) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.query_id.as_str()) {
                return Err(Error::DuplicateId(e.query_id.clone()));
            }
            if e.passage_ids.is_empty() {
                return Err(Error::invalid(format!("query `{}` has no passages", e.query_id)));
            }
        }
        Ok(Self {
            entries,
            generation,
        })
    }

    /// Generation-0 state from a first retrieval pass.
    pub fn initial_fill<F>(query_ids: &[String], retrieve: F, k: usize) -> Result<Self>
    where
        F: Fn(&str) -> Result<ScoreList> + Sync,
    {
        let empty = Self {
            entries: query_ids
                .iter()
                .map(|q| QueryPassages {
                    query_id: q.clone(),
                    passage_ids: Vec::new(),
                })
                .collect(),
            generation: 0,
        };
        let entries = retrieve_all(&empty, &retrieve, k)?;
        Self::new(entries, 0)
    }

    pub fn entries(&self) -> &[QueryPassages] {
        &self.entries
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn passages(&self, query_id: &str) -> Option<&[String]> {
        self.entries
            .iter()
            .find(|e| e.query_id == query_id)
            .map(|e| e.passage_ids.as_slice())
    }

    /// One JSONL line per query carrying the generation.
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let records: Vec<CheckpointRecord> = self
            .entries
            .iter()
            .map(|e| CheckpointRecord {
                query_id: e.query_id.clone(),
                passage_ids: e.passage_ids.clone(),
                generation: self.generation,
            })
            .collect();
        let mut buf = Vec::new();
        crate::io::write_jsonl(&mut buf, &records)?;
        Ok(buf)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let records: Vec<CheckpointRecord> = read_jsonl(path)?;
        let generation = records.first().map_or(0, |r| r.generation);
        if let Some(r) = records.iter().find(|r| r.generation != generation) {
            return Err(Error::invalid(format!(
                "checkpoint mixes generations {generation} and {} (query `{}`)",
                r.generation, r.query_id
            )));
        }
        let entries = records
            .into_iter()
            .map(|r| QueryPassages {
                query_id: r.query_id,
                passage_ids: r.passage_ids,
            })
            .collect();
        Self::new(entries, generation)
    }
}

/// Top-`k` ids of `list` by descending score, ties by ascending id.
fn top_ids(list: &ScoreList, k: usize) -> Vec<String> {
    let mut pairs: Vec<(&str, f64)> = list.iter().collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    pairs.into_iter().take(k).map(|(id, _)| id.to_string()).collect()
}

fn retrieve_all<F>(state: &TrainingSetState, retrieve: &F, k: usize) -> Result<Vec<QueryPassages>>
where
    F: Fn(&str) -> Result<ScoreList> + Sync,
{
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let results: Vec<Result<QueryPassages>> = state
        .entries
        .par_iter()
        .map(|e| {
            let fail = |message: String| Error::Retrieval {
                query: e.query_id.clone(),
                message,
            };
            let list = retrieve(&e.query_id).map_err(|err| fail(err.to_string()))?;
            let passage_ids = top_ids(&list, k);
            if passage_ids.is_empty() {
                return Err(fail("retriever returned no passages".into()));
            }
            Ok(QueryPassages {
                query_id: e.query_id.clone(),
                passage_ids,
            })
        })
        .collect();
    // first failure in query order, independent of scheduling
    results.into_iter().collect()
}

/// A refresh cycle that did not apply; `state` is the unchanged input.
#[derive(Debug)]
pub struct RefreshFailure {
    pub state: TrainingSetState,
    pub error: Error,
}

impl std::fmt::Display for RefreshFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "refresh at generation {} failed: {}", self.state.generation, self.error)
    }
}

impl std::error::Error for RefreshFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Replace every query's passages with the retriever's current top-`k`.
///
/// Retrieval fans out over queries in parallel; the new state is only
/// assembled once every query succeeded.
pub fn run_refresh_cycle<F>(
    state: TrainingSetState,
    retrieve: F,
    k: usize,
) -> Result<TrainingSetState, RefreshFailure>
where
    F: Fn(&str) -> Result<ScoreList> + Sync,
{
    match retrieve_all(&state, &retrieve, k) {
        Ok(entries) => Ok(TrainingSetState {
            entries,
            generation: state.generation + 1,
        }),
        Err(error) => Err(RefreshFailure { state, error }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshEvent {
    pub step: u64,
    pub generation: u64,
}

/// Apply a refresh at every scheduled step; `on_refresh` sees each new state
/// (e.g. to checkpoint it). Stops at the first failure.
pub fn run_schedule<F, C>(
    mut state: TrainingSetState,
    schedule: &RefreshSchedule,
    retrieve: F,
    k: usize,
    mut on_refresh: C,
) -> Result<(TrainingSetState, Vec<RefreshEvent>), RefreshFailure>
where
    F: Fn(&str) -> Result<ScoreList> + Sync,
    C: FnMut(&RefreshEvent, &TrainingSetState) -> Result<()>,
{
    let mut events = Vec::with_capacity(schedule.refresh_steps.len());
    for &step in &schedule.refresh_steps {
        state = run_refresh_cycle(state, &retrieve, k)?;
        let event = RefreshEvent {
            step,
            generation: state.generation,
        };
        log::info!("refresh at step {step}: generation {}", state.generation);
        if let Err(error) = on_refresh(&event, &state) {
            return Err(RefreshFailure { state, error });
        }
        events.push(event);
    }
    Ok((state, events))
}
