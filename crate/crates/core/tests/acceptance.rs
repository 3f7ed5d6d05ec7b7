//! Acceptance checks. Each check prints one PASS/FAIL line with the measured
//! values; the process exits non-zero if any check fails.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use rayon::prelude::*;

use clir::corpus::{load_corpus, Corpus, Passage, Query};
use clir::distill::{
    cross_attention_target, kl_divergence, stage1_losses, stage2_loss, AnswerLogProbs, CrossAttentionBundle,
    Stage1Inputs,
};
use clir::distribution::{make_distribution, Distribution};
use clir::embedding::{DenseVector, MultiVectorEmbedding};
use clir::evalkit::{
    qa_metrics, recall_at_passages_by_language, recall_at_tokens, score_prediction, token_f1, MetricReport,
};
use clir::index::{
    brute_force_topk, build_index, insert_multi, rerank, search_topk, token_budget_slice, IndexMode,
    PassageEmbeddings, QueryEmbedding, RetrievalIndex, TokenSlice, ROLE_PASSAGE_MASK, ROLE_PASSAGE_MULTI,
};
use clir::mining::{
    balanced_sample_counts, margin_score, mine_pages, mine_parallel_pairs, sampling_probabilities, select_by_quota,
    EntitySpan, LanguageStats, MiningConfig, PageTask, PoolSentence, SentencePool,
};
use clir::pipeline::{plan_refresh, run_refresh_cycle, TrainingSetState, DEFAULT_REFRESH_INTERVAL};
use clir::scoring::{multi_vector_score, retrieval_distribution, ScoreList, DEFAULT_HEAD_INDEX};
use clir::synth::{
    build_icl_prompt, build_meta_prompt, choose_wh_word, meta_order, parse_transformed_question,
    render_icl_prompt, AnchorExample, EntityType, IclInstance, MetaExample, RESPONSE_MARKER,
};
use clir::tensor::{load_tensor_bundle, TensorBundle};
use clir::Error;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:05}")).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f32> {
    let normal = Normal::new(0.0, scale).unwrap();
    (0..n).map(|_| normal.sample(rng) as f32).collect()
}

/// Values from {-2..2}: every sum of products is exact, so ties are real.
fn integers(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-2i32..=2) as f32).collect()
}

fn random_mask(rng: &mut ChaCha8Rng, t: usize) -> Vec<bool> {
    let mut mask: Vec<bool> = (0..t).map(|_| rng.random_bool(0.8)).collect();
    let keep = rng.random_range(0..t);
    mask[keep] = true;
    mask
}

fn random_multi(rng: &mut ChaCha8Rng, heads: usize, t: usize, dim: usize, exact: bool) -> MultiVectorEmbedding {
    let n = heads * t * dim;
    let data = if exact { integers(rng, n) } else { gaussian(rng, n, 1.0) };
    let mask = random_mask(rng, t);
    MultiVectorEmbedding::new(heads, t, dim, data, mask).unwrap()
}

fn same_ranking(a: &ScoreList, b: &ScoreList, tol: f64) -> Result<f64, String> {
    ensure(a.ids() == b.ids(), || format!("id order differs: {:?} vs {:?}", a.ids(), b.ids()))?;
    let worst = a
        .scores()
        .iter()
        .zip(b.scores())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    ensure(worst <= tol, || format!("score gap {worst:e}"))?;
    Ok(worst)
}

// ---------------------------------------------------------------------------

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut comparisons = 0usize;
    for corpus in 0..200 {
        let n = rng.random_range(1..=1000);
        let exact = corpus % 4 == 0;
        let k = if corpus % 10 == 0 { n + 3 } else { rng.random_range(1..=n.min(120)) };

        // dense
        let dim = rng.random_range(1..=64);
        let mut vectors: Vec<DenseVector> = (0..n)
            .map(|_| {
                let v = if exact { integers(&mut rng, dim) } else { gaussian(&mut rng, dim, 1.0) };
                DenseVector::new(v).unwrap()
            })
            .collect();
        if exact && n > 1 {
            // duplicated rows force equal scores across different ids
            for i in (1..n).step_by(3) {
                vectors[i] = vectors[i - 1].clone();
            }
        }
        let pid = ids("p", n);
        let mut shuffled: Vec<usize> = (0..n).collect();
        shuffled.shuffle(&mut rng);
        let order_ids: Vec<String> = shuffled.iter().map(|&i| pid[i].clone()).collect();
        let index = RetrievalIndex::dense(order_ids.clone(), &vectors).map_err(err)?;
        let table = PassageEmbeddings::Dense {
            ids: order_ids.clone(),
            vectors: vectors.clone(),
        };
        for _ in 0..3 {
            let q = if exact { integers(&mut rng, dim) } else { gaussian(&mut rng, dim, 1.0) };
            let q = QueryEmbedding::Dense(DenseVector::new(q).unwrap());
            let fast = search_topk(&index, &q, k).map_err(err)?;
            let slow = brute_force_topk(&table, &q, k, 0).map_err(err)?;
            worst = worst.max(same_ranking(&fast, &slow, 1e-6).map_err(|e| format!("dense corpus {corpus}: {e}"))?);
            comparisons += 1;
        }

        // multi-vector
        let heads = rng.random_range(1..=8);
        let head = rng.random_range(0..heads);
        let dim = rng.random_range(1..=32);
        let mut embs: Vec<MultiVectorEmbedding> = (0..n)
            .map(|_| {
                let t = rng.random_range(1..=12);
                random_multi(&mut rng, heads, t, dim, exact)
            })
            .collect();
        if exact && n > 1 {
            for i in (1..n).step_by(3) {
                embs[i] = embs[i - 1].clone();
            }
        }
        let index = RetrievalIndex::multi_vector(order_ids.clone(), embs.clone(), head).map_err(err)?;
        let table = PassageEmbeddings::MultiVector {
            ids: order_ids,
            embeddings: embs,
        };
        for _ in 0..3 {
            let t = rng.random_range(1..=8);
            let q = QueryEmbedding::MultiVector(random_multi(&mut rng, heads, t, dim, exact));
            let fast = search_topk(&index, &q, k).map_err(err)?;
            let slow = brute_force_topk(&table, &q, k, head).map_err(err)?;
            worst = worst.max(same_ranking(&fast, &slow, 1e-6).map_err(|e| format!("multi corpus {corpus}: {e}"))?);
            comparisons += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.1?}"))?;
    Ok(format!(
        "200 corpora x 2 modes, {comparisons} queries, identical order, max score gap {worst:.1e}, {elapsed:.1?} (< 60 s)"
    ))
}

// ---------------------------------------------------------------------------

fn naive_score(q: &MultiVectorEmbedding, d: &MultiVectorEmbedding, head: usize) -> f64 {
    let dim = q.dim();
    let qh = &q.data()[head * q.token_count() * dim..(head + 1) * q.token_count() * dim];
    let dh = &d.data()[head * d.token_count() * dim..(head + 1) * d.token_count() * dim];
    let mut total = 0.0;
    for i in 0..q.token_count() {
        if !q.pad_mask()[i] {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..d.token_count() {
            if !d.pad_mask()[j] {
                continue;
            }
            let mut s = 0.0;
            for x in 0..dim {
                s += qh[i * dim + x] as f64 * dh[j * dim + x] as f64;
            }
            best = best.max(s);
        }
        total += best;
    }
    total
}

/// Reorder tokens of every head by `perm`.
fn permute_tokens(e: &MultiVectorEmbedding, perm: &[usize]) -> MultiVectorEmbedding {
    let (h, t, dim) = (e.head_count(), e.token_count(), e.dim());
    let mut data = Vec::with_capacity(e.data().len());
    for head in 0..h {
        for &p in perm {
            let at = (head * t + p) * dim;
            data.extend_from_slice(&e.data()[at..at + dim]);
        }
    }
    let mask = perm.iter().map(|&p| e.pad_mask()[p]).collect();
    MultiVectorEmbedding::new(h, t, dim, data, mask).unwrap()
}

/// Tokens of `a` followed by tokens of `b`.
fn concat_tokens(a: &MultiVectorEmbedding, b: &MultiVectorEmbedding) -> MultiVectorEmbedding {
    let (h, dim) = (a.head_count(), a.dim());
    let (ta, tb) = (a.token_count(), b.token_count());
    let mut data = Vec::new();
    for head in 0..h {
        data.extend_from_slice(&a.data()[head * ta * dim..(head + 1) * ta * dim]);
        data.extend_from_slice(&b.data()[head * tb * dim..(head + 1) * tb * dim]);
    }
    let mask = a.pad_mask().iter().chain(b.pad_mask()).copied().collect();
    MultiVectorEmbedding::new(h, ta + tb, dim, data, mask).unwrap()
}

fn sum_of_max() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let heads = rng.random_range(1..=8);
        let head = rng.random_range(0..heads);
        let dim = rng.random_range(1..=64);
        let (tq, td) = (rng.random_range(1..=16), rng.random_range(1..=32));
        let q = random_multi(&mut rng, heads, tq, dim, false);
        let d = random_multi(&mut rng, heads, td, dim, false);
        let s = multi_vector_score(&q, &d, head).map_err(err)?;
        let gap = (s - naive_score(&q, &d, head)).abs();
        worst = worst.max(gap);
        ensure(gap <= 1e-6, || format!("case {case}: gap {gap:e}"))?;

        // passage-token order never matters: max is order-free
        let mut perm: Vec<usize> = (0..td).collect();
        perm.shuffle(&mut rng);
        let sp = multi_vector_score(&q, &permute_tokens(&d, &perm), head).map_err(err)?;
        ensure(sp == s, || format!("case {case}: passage permutation changed {s} to {sp}"))?;

        // query order and additivity, on integer data where sums are exact
        let qi = random_multi(&mut rng, heads, tq, dim, true);
        let tj = rng.random_range(1..=8);
        let qj = random_multi(&mut rng, heads, tj, dim, true);
        let di = random_multi(&mut rng, heads, td, dim, true);
        let base = multi_vector_score(&qi, &di, head).map_err(err)?;
        let mut perm: Vec<usize> = (0..tq).collect();
        perm.shuffle(&mut rng);
        let permuted = multi_vector_score(&permute_tokens(&qi, &perm), &di, head).map_err(err)?;
        ensure(permuted == base, || format!("case {case}: query permutation changed {base} to {permuted}"))?;
        let joint = multi_vector_score(&concat_tokens(&qi, &qj), &di, head).map_err(err)?;
        let parts = base + multi_vector_score(&qj, &di, head).map_err(err)?;
        ensure(joint == parts, || format!("case {case}: additivity {joint} != {parts}"))?;
    }
    Ok(format!(
        "1000 instances vs double-loop oracle, max gap {worst:.1e} (<= 1e-6); permutation and additivity exact"
    ))
}

// ---------------------------------------------------------------------------

fn unit(dim: usize, axis: usize) -> DenseVector {
    let mut v = vec![0.0; dim];
    v[axis] = 1.0;
    DenseVector::new(v).unwrap()
}

fn margin_mining() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_uniform = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(1..=10);
        let c: f64 = rng.random_range(1e-3..1.0);
        let m = margin_score(c, &vec![c; k], &vec![c; k], k).map_err(err)?;
        worst_uniform = worst_uniform.max((m - 1.0).abs());
    }
    ensure(worst_uniform <= 1e-9, || format!("uniform case off by {worst_uniform:e}"))?;
    let worked = margin_score(0.9, &[0.9, 0.5], &[0.9, 0.7], 2).map_err(err)?;
    ensure((worked - 1.2).abs() <= 1e-12, || format!("worked example gave {worked}"))?;

    // planted pairs share an axis; distractors sit on axes of their own
    let mut recovered_all = true;
    let mut false_positives = 0;
    let mut planted_total = 0;
    for trial in 0..20 {
        let planted = rng.random_range(1..=30);
        let (en_extra, l_extra) = (rng.random_range(0..20), rng.random_range(0..20));
        let dim = planted + en_extra + l_extra;
        let mut en = Vec::new();
        let mut l = Vec::new();
        for i in 0..planted {
            let name = format!("Name{trial}x{i}");
            en.push(
                PoolSentence::new(format!("{name} was here"), unit(dim, i)).with_entities(vec![EntitySpan {
                    start: 0,
                    end: name.chars().count(),
                    label: "PERSON".into(),
                }]),
            );
            l.push(PoolSentence::new(format!("{name} oli täällä"), unit(dim, i)));
        }
        for i in 0..en_extra {
            en.push(
                PoolSentence::new(format!("Other{i} stays"), unit(dim, planted + i)).with_entities(vec![EntitySpan {
                    start: 0,
                    end: 5 + i.to_string().len(),
                    label: "PERSON".into(),
                }]),
            );
        }
        for i in 0..l_extra {
            l.push(PoolSentence::new(format!("Muu{i} jää"), unit(dim, planted + en_extra + i)));
        }
        // planted L sentences are shuffled against their English partners
        let mut order: Vec<usize> = (0..l.len()).collect();
        order.shuffle(&mut rng);
        let l_sorted: Vec<PoolSentence> = order.iter().map(|&j| l[j].clone()).collect();
        let en_pool = SentencePool::new("en", en).map_err(err)?;
        let l_pool = SentencePool::new("fi", l_sorted).map_err(err)?;
        let config = MiningConfig {
            threshold: Some(1.5),
            ..MiningConfig::default()
        };
        let pairs = mine_parallel_pairs(&en_pool, &l_pool, &config).map_err(err)?;
        let expected: HashSet<(usize, usize)> = (0..planted)
            .map(|i| (i, order.iter().position(|&j| j == i).unwrap()))
            .collect();
        let got: HashSet<(usize, usize)> = pairs.iter().map(|p| (p.en_index, p.l_index)).collect();
        planted_total += planted;
        false_positives += got.difference(&expected).count();
        recovered_all &= expected.is_subset(&got);
    }
    ensure(recovered_all && false_positives == 0, || {
        format!("planted recovery incomplete or {false_positives} false positives")
    })?;
    Ok(format!(
        "uniform M max |M-1| {worst_uniform:.1e}; worked example {worked}; planted pools: {planted_total}/{planted_total} recovered, 0 false positives at T=1.5"
    ))
}

// ---------------------------------------------------------------------------

fn balanced_sampling() -> Outcome {
    let stats = LanguageStats::new(BTreeMap::from([("a".to_string(), 100), ("b".to_string(), 400)])).map_err(err)?;
    let p = sampling_probabilities(&stats, 0.5).map_err(err)?;
    let (pa, pb) = (p["a"], p["b"]);
    ensure((pa - 1.0 / 3.0).abs() <= 1e-9 && (pb - 2.0 / 3.0).abs() <= 1e-9, || format!("alpha 0.5 gave ({pa}, {pb})"))?;
    let p1 = sampling_probabilities(&stats, 1.0).map_err(err)?;
    ensure((p1["a"] - 0.2).abs() <= 1e-12 && (p1["b"] - 0.8).abs() <= 1e-12, || format!("alpha 1 gave {p1:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..5000 {
        let langs = rng.random_range(1..=12);
        let counts: BTreeMap<String, u64> =
            (0..langs).map(|i| (format!("l{i}"), rng.random_range(1..=5000u64))).collect();
        let stats = LanguageStats::new(counts.clone()).map_err(err)?;
        let total = rng.random_range(1..=stats.total());
        let alpha = rng.random_range(0.05..=1.0);
        let plan = balanced_sample_counts(&stats, alpha, total).map_err(err)?;
        let sum: u64 = plan.quotas.values().sum();
        ensure(sum == total, || format!("case {case}: quotas sum to {sum}, asked {total}"))?;
        ensure(plan.quotas.iter().all(|(l, q)| *q <= counts[l]), || format!("case {case}: quota above count"))?;
    }
    Ok(format!(
        "alpha 0.5 -> ({pa:.12}, {pb:.12}); alpha 1 -> ({}, {}); 5000 random plans sum to the requested total",
        p1["a"], p1["b"]
    ))
}

// ---------------------------------------------------------------------------

fn random_distribution(rng: &mut ChaCha8Rng, support: &[String]) -> Distribution {
    let w: Vec<f64> = (0..support.len())
        .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) })
        .collect();
    let w = if w.iter().all(|&x| x == 0.0) { vec![1.0; w.len()] } else { w };
    make_distribution(support.iter().cloned(), &w).unwrap()
}

fn loss_arithmetic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut min_kl = f64::INFINITY;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=50);
        let support = ids("p", n);
        let p = random_distribution(&mut rng, &support);
        let q = random_distribution(&mut rng, &support);
        let kl = kl_divergence(&p, &q).map_err(err)?;
        min_kl = min_kl.min(kl);
        ensure(kl >= 0.0 && kl.is_finite(), || format!("KL {kl}"))?;
    }

    // stage-1 total is exactly reader + alpha (kl + align)
    for case in 0..1000 {
        let support = ids("p", rng.random_range(1..=20));
        let (sl, se, t) = (
            random_distribution(&mut rng, &support),
            random_distribution(&mut rng, &support),
            random_distribution(&mut rng, &support),
        );
        let vocab = ids("v", 5);
        let steps = rng.random_range(0..4);
        let steps_en: Vec<Distribution> = (0..steps).map(|_| random_distribution(&mut rng, &vocab)).collect();
        let steps_l: Vec<Distribution> = (0..steps).map(|_| random_distribution(&mut rng, &vocab)).collect();
        let lp_en = AnswerLogProbs::new(vec![-rng.random_range(0.0..3.0); 3]).map_err(err)?;
        let lp_l = AnswerLogProbs::new(vec![-rng.random_range(0.0..3.0); 2]).map_err(err)?;
        let mut report = None;
        for alpha in [0.0, 0.5, 1.0, 8.0, rng.random_range(0.0..20.0)] {
            let r = stage1_losses(&Stage1Inputs {
                student_l: &sl,
                student_en: &se,
                teacher: &t,
                answer_lp_en: &lp_en,
                answer_lp_l: &lp_l,
                answer_steps_en: &steps_en,
                answer_steps_l: &steps_l,
                alpha,
            })
            .map_err(err)?;
            ensure(r.total == r.reader + alpha * (r.kl + r.align), || format!("case {case}: total not linear in alpha"))?;
            if let Some((kl, reader, align)) = report {
                ensure((kl, reader, align) == (r.kl, r.reader, r.align), || format!("case {case}: terms depend on alpha"))?;
            }
            report = Some((r.kl, r.reader, r.align));
        }
    }

    let two = |a: f64, b: f64| make_distribution(["p1", "p2"], &[a, b]).unwrap();
    let s2 = stage2_loss(&two(0.5, 0.5), &two(0.25, 0.75), &AnswerLogProbs::new(vec![-0.5, -1.5]).unwrap(), 8.0)
        .map_err(err)?;
    // hand derivation: alpha * KL(retrieval || target) + (-sum lp), KL rounded to 0.14384
    let kl_oracle = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
    let oracle = 8.0 * kl_oracle + 2.0;
    ensure((s2.total - oracle).abs() <= 1e-5, || format!("stage-2 fixture gave {}, oracle {oracle}", s2.total))?;
    ensure((s2.total - (8.0 * 0.14384 + 2.0)).abs() <= 1e-5, || format!("stage-2 fixture gave {}", s2.total))?;

    let fixture = CrossAttentionBundle::new(
        2,
        vec!["p1".into(), "p2".into()],
        vec![vec![0.2, 0.1, 0.3, 0.0], vec![0.4, 0.1]],
    )
    .map_err(err)?;
    let target = cross_attention_target(&fixture).map_err(err)?;
    let (t1, t2) = (target.probs()[0], target.probs()[1]);
    ensure((t1 - 6.0 / 11.0).abs() <= 1e-9 && (t2 - 5.0 / 11.0).abs() <= 1e-9, || format!("fixture gave ({t1}, {t2})"))?;

    let mut worst_scale = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let heads = rng.random_range(1..=4);
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..heads * rng.random_range(1..=6)).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let c: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled: Vec<Vec<f64>> = scores.iter().map(|s| s.iter().map(|v| v * c).collect()).collect();
        let a = cross_attention_target(&CrossAttentionBundle::new(heads, ids("p", n), scores).map_err(err)?);
        let b = cross_attention_target(&CrossAttentionBundle::new(heads, ids("p", n), scaled).map_err(err)?);
        let (Ok(a), Ok(b)) = (a, b) else { continue };
        for (x, y) in a.probs().iter().zip(b.probs()) {
            worst_scale = worst_scale.max((x - y).abs());
        }
    }
    ensure(worst_scale <= 1e-9, || format!("scale invariance gap {worst_scale:e}"))?;
    Ok(format!(
        "10000 KL pairs min {min_kl:.2e} >= 0; stage-1 linear in alpha exactly; stage-2 fixture {:.9} (oracle 8*KL+2, KL {kl_oracle:.5}); P_ca fixture ({t1:.12}, {t2:.12}); scale gap {worst_scale:.1e}",
        s2.total
    ))
}

// ---------------------------------------------------------------------------

fn refresh_scheduling() -> Outcome {
    let schedule = plan_refresh(16_000, DEFAULT_REFRESH_INTERVAL).map_err(err)?;
    ensure(schedule.refresh_steps.len() == 16, || format!("{} refresh points", schedule.refresh_steps.len()))?;
    ensure(schedule.refresh_steps.first() == Some(&1000) && schedule.refresh_steps.last() == Some(&16_000), || {
        format!("{:?}", schedule.refresh_steps)
    })?;

    let queries = ids("q", 50);
    let retrieve = |q: &str| -> clir::Result<ScoreList> {
        let n: usize = q[1..].parse().unwrap();
        ScoreList::new(ids("p", 10), (0..10).map(|i| ((i * 7 + n) % 10) as f64).collect())
    };
    let state = TrainingSetState::initial_fill(&queries, retrieve, 5).map_err(err)?;
    let state = run_refresh_cycle(state, retrieve, 5).map_err(err)?;
    let before = state.to_jsonl().map_err(err)?;
    let failing = |q: &str| -> clir::Result<ScoreList> {
        if q == "q00031" {
            Err(Error::InvalidArgument("retriever unavailable".into()))
        } else {
            ScoreList::new(ids("x", 3), vec![1.0, 2.0, 3.0])
        }
    };
    let failure = run_refresh_cycle(state, failing, 5).err().ok_or("failing cycle succeeded")?;
    let names = matches!(&failure.error, Error::Retrieval { query, .. } if query == "q00031");
    ensure(names, || format!("error does not name the query: {}", failure.error))?;
    let after = failure.state.to_jsonl().map_err(err)?;
    ensure(before == after && failure.state.generation() == 1, || "state changed by a failed cycle".into())?;
    Ok(format!(
        "16000 steps / interval 1000 -> {} refresh points; failed cycle left state byte-identical ({} bytes, generation 1)",
        schedule.refresh_steps.len(),
        before.len()
    ))
}

// ---------------------------------------------------------------------------

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn anchor(sentence: &str, answer: &str, ty: EntityType, lang: &str) -> AnchorExample {
    AnchorExample {
        cloze_sentence: sentence.into(),
        answer_l: answer.into(),
        answer_en: answer.into(),
        entity_type: ty,
        lang: lang.into(),
    }
}

fn meta(sentence: &str, wh: &str, answer: &str, question: &str) -> MetaExample {
    MetaExample {
        sentence: sentence.into(),
        wh_word: wh.into(),
        answer: answer.into(),
        transformed_question: question.into(),
        lang: "fi".into(),
    }
}

fn random_question(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 16] = [
        "Who", "founded", "the", "company", "Missä", "maassa", "hän", "pelasi", "熊野那智神社", "はどこ", "Кто",
        "был", "어디", "입니까", "1994", "\"quoted\"",
    ];
    const ENDS: [&str; 4] = ["?", "？", "", "!"];
    let n = rng.random_range(1..=12);
    let words: Vec<&str> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    format!("{}{}", words.join(" "), ENDS[rng.random_range(0..ENDS.len())])
}

fn prompt_goldens() -> Outcome {
    let fi = build_meta_prompt(
        &anchor(
            "Strapping Young Lad (lyh. SYL) oli Devin Townsendin vuonna 1994 perustama kanadalainen metalliyhtye.",
            "1994",
            EntityType::Date,
            "fi",
        ),
        "Milloin",
    )
    .map_err(err)?;
    ensure(fi.text == golden("meta_prompt_fi.txt"), || format!("meta prompt differs:\n{}", fi.text))?;
    let ja = build_meta_prompt(
        &anchor("熊野那智神社（くまのなちじんじゃ）は、宮城県名取市にある神社である。", "宮城県", EntityType::Gpe, "ja"),
        "どこ",
    )
    .map_err(err)?;
    ensure(ja.text == golden("meta_prompt_ja.txt"), || format!("meta prompt differs:\n{}", ja.text))?;

    let metas = [
        meta(
            "Toisaalta hän oli taiteiden suosija ja hänen valtakaudellaan Preussi sai haltuunsa suuren osan Puola-Liettuasta Puolan jaoissa vuosina 1793 ja 1795.",
            "Missä",
            "Preussi",
            "Missä maassa taiteiden suosija hallitsi ja missä valtakunnassa saatiin haltuunsa suuri osa Puola-Liettuasta Puolan jaoissa vuosina 1793 ja 1795?",
        ),
        meta(
            "Hän pelasi urallaan myös Ruotsissa ja Slovakiassa.",
            "Missä",
            "Slovakia",
            "Missä maassa hän pelasi urallaan Ruotsin lisäksi?",
        ),
        meta(
            "Barokin jälkeen concerto grossoja ovat säveltäneet muun muassa Heitor Villa-Lobos, Bohuslav Martinů, Alfred Schnittke ja Philip Glass.",
            "Kuka",
            "Bohuslav Martinů",
            "Kuka säveltäjistä Heitor Villa-Lobosin, Alfred Schnittken ja Philip Glassin ohella on säveltänyt concerto grossoja barokin jälkeen?",
        ),
    ];
    let instance = IclInstance {
        sentence: "Hänen ajatteluunsa vaikuttivat muun muassa buddhalaiset ja taolaiset ideat, joihin hän tutustui Aasian matkoillaan, Mahatma Gandhin väkivallattomuusliike, sekä hänen katolinen uskontonsa.".into(),
        wh_word: "Kuka".into(),
        answer: "Mahatma Gandhi".into(),
        lang: "fi".into(),
    };
    let refs: Vec<&MetaExample> = metas.iter().collect();
    let icl = render_icl_prompt(&refs, &instance).map_err(err)?;
    ensure(icl.text == golden("icl_prompt_fi.txt"), || format!("ICL prompt differs:\n{}", icl.text))?;
    // the seeded shuffle only permutes the same blocks
    for seed in 0..20 {
        let shuffled = build_icl_prompt(&metas, &instance, seed).map_err(err)?;
        let order: Vec<&MetaExample> = meta_order(3, seed).into_iter().map(|i| &metas[i]).collect();
        ensure(shuffled == render_icl_prompt(&order, &instance).map_err(err)?, || format!("seed {seed} mismatch"))?;
        ensure(shuffled == build_icl_prompt(&metas, &instance, seed).map_err(err)?, || "not deterministic".into())?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let q = random_question(&mut rng);
        let response = match case % 3 {
            0 => format!("{RESPONSE_MARKER} {q}"),
            1 => format!("{RESPONSE_MARKER} \"{q}\""),
            _ => format!("Sure.\n{RESPONSE_MARKER}   {q}  \n"),
        };
        let parsed = parse_transformed_question(&response).map_err(err)?;
        ensure(parsed == q.trim(), || format!("round trip of {q:?} gave {parsed:?}"))?;
    }
    Ok("meta prompts (fi, ja) and ICL prompt byte-match golden files; 1000 random questions round-trip".into())
}

// ---------------------------------------------------------------------------

fn wh_word_table() -> Outcome {
    let rows: [(&[&str], &str); 6] = [
        (&["PERSON", "NORP", "ORG"], "Who"),
        (&["GPE", "LOC", "FAC"], "Where"),
        (&["PRODUCT", "EVENT", "WORKOFART", "LAW", "LANGUAGE"], "What"),
        (&["TIME", "DATE"], "When"),
        (&["PERCENT", "MONEY", "QUANTITY"], "How much"),
        (&["ORDINAL", "CARDINAL"], "How many"),
    ];
    let mut checked = 0;
    for (types, word) in rows {
        for t in types {
            let got = choose_wh_word(t, "en").map_err(err)?;
            ensure(got == word, || format!("{t} -> {got}, expected {word}"))?;
            checked += 1;
        }
    }
    ensure(checked == EntityType::ALL.len(), || format!("{checked} labels checked"))?;
    ensure(choose_wh_word("MISC", "en").is_err(), || "unknown label accepted".into())?;
    Ok(format!("all five table rows exact ({checked} labels, How much/How many split for the numeric row)"))
}

// ---------------------------------------------------------------------------

fn passage(id: &str, lang: &str, text: &str) -> Passage {
    Passage {
        id: id.into(),
        lang: lang.into(),
        title: String::new(),
        text: text.into(),
        token_count: clir::tokenize::count_tokens(text),
    }
}

fn query(id: &str, lang: &str, answers: &[(&str, &str)]) -> Query {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (l, a) in answers {
        map.entry(l.to_string()).or_default().push(a.to_string());
    }
    Query {
        id: id.into(),
        lang: lang.into(),
        text: "q".into(),
        answers: map,
    }
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    const WORDS: [&str; 8] = ["alpha", "beta", "gamma", "delta", "東京", "Paris", "1945", "river"];
    let mut monotone_cases = 0;
    let mut containment_cases = 0;
    for case in 0..300 {
        let n = rng.random_range(1..=30);
        let passages: Vec<Passage> = (0..n)
            .map(|i| {
                let len = rng.random_range(1..=12);
                let text: Vec<&str> = (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
                let lang = if rng.random_bool(0.5) { "en" } else { "ja" };
                passage(&format!("p{i}"), lang, &text.join(" "))
            })
            .collect();
        let corpus = Corpus::from_passages(passages, "mem").map_err(err)?;
        let queries: Vec<Query> = (0..5)
            .map(|i| {
                let lang = if i % 2 == 0 { "ja" } else { "en" };
                let a = WORDS[rng.random_range(0..WORDS.len())];
                let b = WORDS[rng.random_range(0..WORDS.len())];
                query(&format!("q{i}"), lang, &[("ja", a), ("en", b)])
            })
            .collect();
        let ranked: HashMap<String, ScoreList> = queries
            .iter()
            .map(|q| {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                let list = ScoreList::new(
                    order.iter().map(|i| format!("p{i}")).collect(),
                    (0..n).map(|r| (n - r) as f64).collect(),
                )
                .unwrap();
                (q.id.clone(), list)
            })
            .collect();
        let mut previous: Option<BTreeMap<String, f64>> = None;
        for budget in [1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 400] {
            let slices: HashMap<String, TokenSlice> = queries
                .iter()
                .map(|q| (q.id.clone(), token_budget_slice(&ranked[&q.id], &corpus, budget).unwrap()))
                .collect();
            let r = recall_at_tokens(&queries, &slices, &corpus, budget).map_err(err)?;
            if let Some(prev) = &previous {
                for (lang, v) in &r.per_language {
                    ensure(*v >= prev[lang], || format!("case {case}: recall fell at budget {budget}"))?;
                }
            }
            previous = Some(r.per_language);
            monotone_cases += 1;
        }
        let top_n = rng.random_range(1..=n);
        let pr = recall_at_passages_by_language(&queries, &ranked, &corpus, top_n).map_err(err)?;
        for (lang, any) in &pr.any {
            ensure(*any >= pr.target[lang], || format!("case {case}: R_any < R_target"))?;
        }
        containment_cases += 1;
    }
    let f1 = token_f1("the cat", "a cat");
    let em = score_prediction("the cat", &["a cat"]).em;
    ensure(f1 == 0.5 && em == 0.0, || format!("fixture gave F1 {f1}, EM {em}"))?;
    let id = score_prediction("Devin Townsend perusti yhtyeen 1994", &["Devin Townsend perusti yhtyeen 1994"]);
    ensure(id.bleu == 1.0 && id.f1 == 1.0 && id.em == 1.0, || format!("identity gave {id:?}"))?;
    let punct = score_prediction("1945.", &["1945"]).em;
    ensure(punct == 1.0, || "\"1945.\" does not match \"1945\"".into())?;
    Ok(format!(
        "recall monotone over {monotone_cases} budget steps; R_any >= R_target on {containment_cases} random sets; F1/EM 0.5/0; identity BLEU 1.0"
    ))
}

// ---------------------------------------------------------------------------

const E2E_PAGES: usize = 100;
const E2E_PER_PAGE: usize = 50;
const E2E_ALIGNED: usize = 45;
const E2E_SENT_DIM: usize = 64;
const E2E_HEADS: usize = 7;
const E2E_TOKEN_DIM: usize = 16;
const E2E_QUERIES: u64 = 300;
const E2E_BUDGET: usize = 50;

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v = gaussian(rng, dim, 1.0);
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt() as f32;
    v.into_iter().map(|x| x / n).collect()
}

fn noisy(rng: &mut ChaCha8Rng, v: &[f32], scale: f64) -> Vec<f32> {
    let noise = gaussian(rng, v.len(), scale);
    v.iter().zip(noise).map(|(a, b)| a + b).collect()
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tmp = tempfile::tempdir().map_err(err)?;
    const EN_WORDS: [&str; 8] = ["north", "river", "old", "city", "music", "band", "stone", "bridge"];
    const FI_WORDS: [&str; 8] = ["pohjoinen", "joki", "vanha", "kaupunki", "musiikki", "yhtye", "kivi", "silta"];
    let noise = 0.3 / (E2E_SENT_DIM as f64).sqrt();

    // --- mine: pages of English and Finnish sentences with planted translations
    let mut tasks = Vec::new();
    let mut planted: HashSet<(String, usize, usize)> = HashSet::new();
    let mut passages = Vec::new();
    for page in 0..E2E_PAGES {
        let page_id = format!("page{page:03}");
        let mut perm: Vec<usize> = (0..E2E_PER_PAGE).collect();
        perm.shuffle(&mut rng);
        let mut en = Vec::new();
        let mut fi: Vec<Option<PoolSentence>> = vec![None; E2E_PER_PAGE];
        for i in 0..E2E_PER_PAGE {
            let entity = format!("Ent{page}x{i}");
            let year = rng.random_range(1800..2020);
            let w = rng.random_range(0..EN_WORDS.len());
            let en_text = format!("{entity} was built by the {} {} in {year}", EN_WORDS[w], EN_WORDS[(w + 3) % 8]);
            let base = unit_gaussian(&mut rng, E2E_SENT_DIM);
            let span = EntitySpan {
                start: 0,
                end: entity.chars().count(),
                label: "FAC".into(),
            };
            en.push(
                PoolSentence::new(en_text.clone(), DenseVector::new(noisy(&mut rng, &base, noise)).unwrap())
                    .with_entities(vec![span]),
            );
            passages.push(passage(&format!("en-{page}-{i}"), "en", &en_text));
            let (fi_text, fi_vec) = if i < E2E_ALIGNED {
                planted.insert((page_id.clone(), i, perm[i]));
                let text = format!("{} {} rakensi {entity} vuonna {year}", FI_WORDS[w], FI_WORDS[(w + 3) % 8]);
                (text, noisy(&mut rng, &base, noise))
            } else {
                let text = format!("Muu{page}x{i} on {} {}", FI_WORDS[w], FI_WORDS[(w + 5) % 8]);
                (text, unit_gaussian(&mut rng, E2E_SENT_DIM))
            };
            passages.push(passage(&format!("fi-{page}-{}", perm[i]), "fi", &fi_text));
            fi[perm[i]] = Some(PoolSentence::new(fi_text, DenseVector::new(fi_vec).unwrap()));
        }
        tasks.push(PageTask {
            page: page_id,
            en: SentencePool::new("en", en).map_err(err)?,
            foreign: SentencePool::new("fi", fi.into_iter().map(Option::unwrap).collect()).map_err(err)?,
        });
    }
    let sentences = 2 * E2E_PAGES * E2E_PER_PAGE;
    let pairs = mine_pages(&tasks, &MiningConfig::default()).map_err(err)?;
    let found: HashSet<(String, usize, usize)> = pairs
        .iter()
        .map(|p| (p.page.clone().unwrap_or_default(), p.en_index, p.l_index))
        .collect();
    let hit = planted.intersection(&found).count();
    let mining_recall = hit as f64 / planted.len() as f64;
    let false_pairs = found.len() - hit;
    ensure(mining_recall >= 0.95, || format!("mined-pair recall {mining_recall:.4}"))?;
    let mine_time = start.elapsed();

    // --- index: passages from both languages, multi-vector embeddings via a bundle
    let corpus_path = tmp.path().join("corpus.jsonl");
    let staged = Corpus::from_passages(passages, &corpus_path).map_err(err)?;
    staged.write(&corpus_path).map_err(err)?;
    let corpus = load_corpus(&corpus_path).map_err(err)?;
    let embeddings: Vec<MultiVectorEmbedding> = corpus
        .passages()
        .iter()
        .map(|p| {
            let t = p.token_count.min(16);
            let data: Vec<f32> = (0..E2E_HEADS * t)
                .flat_map(|_| unit_gaussian(&mut rng, E2E_TOKEN_DIM))
                .collect();
            MultiVectorEmbedding::new(E2E_HEADS, t, E2E_TOKEN_DIM, data, vec![true; t]).unwrap()
        })
        .collect();
    let pids: Vec<String> = corpus.passages().iter().map(|p| p.id.clone()).collect();
    let mut bundle = TensorBundle::new();
    insert_multi(&mut bundle, "passages", ROLE_PASSAGE_MULTI, ROLE_PASSAGE_MASK, &pids, &embeddings).map_err(err)?;
    let bundle_dir = tmp.path().join("bundle");
    bundle.save(&bundle_dir).map_err(err)?;
    let bundle = load_tensor_bundle(&bundle_dir).map_err(err)?;
    let index = build_index(&corpus, &bundle, IndexMode::MultiVector, DEFAULT_HEAD_INDEX).map_err(err)?;
    let index_dir = tmp.path().join("index");
    index.save(&index_dir).map_err(err)?;
    let index = RetrievalIndex::load(&index_dir).map_err(err)?;

    // --- queries: Finnish cloze questions from a balanced sample of mined pairs;
    // each query embedding echoes tokens of the English evidence passage
    let stats = LanguageStats::from_pairs(&pairs).map_err(err)?;
    let plan = balanced_sample_counts(&stats, 0.5, E2E_QUERIES).map_err(err)?;
    let chosen = select_by_quota(&pairs, &plan.quotas);
    let row_of: HashMap<&str, usize> = pids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut queries = Vec::new();
    let mut query_embs = Vec::new();
    let mut evidence = Vec::new();
    for (n, pair) in chosen.iter().enumerate() {
        let page: usize = pair.page.as_deref().unwrap_or("page0")[4..].parse().unwrap();
        let evidence_id = format!("en-{page}-{}", pair.en_index);
        let target = &embeddings[row_of[evidence_id.as_str()]];
        let head = target.head(DEFAULT_HEAD_INDEX).map_err(err)?;
        let rows: Vec<&[f32]> = head.rows().take(8).collect();
        let t = rows.len();
        let mut data = Vec::new();
        for h in 0..E2E_HEADS {
            for r in &rows {
                if h == DEFAULT_HEAD_INDEX {
                    data.extend(noisy(&mut rng, r, 0.05));
                } else {
                    data.extend(unit_gaussian(&mut rng, E2E_TOKEN_DIM));
                }
            }
        }
        query_embs.push(QueryEmbedding::MultiVector(
            MultiVectorEmbedding::new(E2E_HEADS, t, E2E_TOKEN_DIM, data, vec![true; t]).map_err(err)?,
        ));
        queries.push(Query {
            id: format!("q{n:04}"),
            lang: "fi".into(),
            text: pair.l_cloze.clone(),
            answers: BTreeMap::from([
                ("fi".to_string(), vec![pair.answer.clone()]),
                ("en".to_string(), vec![pair.answer.clone()]),
            ]),
        });
        evidence.push(evidence_id);
    }

    // --- retrieve
    let ranked: Vec<ScoreList> = query_embs
        .par_iter()
        .map(|q| search_topk(&index, q, 100))
        .collect::<clir::Result<_>>()
        .map_err(err)?;
    let top1 = ranked.iter().zip(&evidence).filter(|(r, e)| r.ids().first() == Some(*e)).count();

    // --- targets: cross-attention concentrated on the evidence passage
    let mut worst_identity = 0.0f64;
    for (list, ev) in ranked.iter().zip(&evidence) {
        let mut top = list.clone();
        top.truncate(20);
        let retrieval = retrieval_distribution(&top, 1.0).map_err(err)?;
        let heads = 4;
        let scores: Vec<Vec<f64>> = top
            .ids()
            .iter()
            .map(|id| {
                let mass = if id == ev { 1.0 } else { 0.01 };
                (0..heads * 5).map(|_| mass * rng.random_range(0.5..1.5)).collect()
            })
            .collect();
        let ca = CrossAttentionBundle::new(heads, top.ids().to_vec(), scores).map_err(err)?;
        let target = cross_attention_target(&ca).map_err(err)?;
        if top.ids().contains(ev) {
            let mass = target.prob(ev).unwrap_or(0.0);
            ensure(mass > 0.5, || format!("cross-attention target gives the evidence {mass}"))?;
        }
        let lp = AnswerLogProbs::new(vec![-rng.random_range(0.0..2.0); 4]).map_err(err)?;
        let loss = stage2_loss(&retrieval, &target, &lp, 8.0).map_err(err)?;
        ensure(loss.total.is_finite() && loss.kl >= 0.0, || format!("bad loss {loss:?}"))?;
        worst_identity = worst_identity.max((loss.total - loss.recomputed_total()).abs());
    }

    // --- eval
    let ranked_map: HashMap<String, ScoreList> =
        queries.iter().zip(&ranked).map(|(q, r)| (q.id.clone(), r.clone())).collect();
    let slices: HashMap<String, TokenSlice> = queries
        .iter()
        .map(|q| Ok((q.id.clone(), token_budget_slice(&ranked_map[&q.id], &corpus, E2E_BUDGET)?)))
        .collect::<clir::Result<_>>()
        .map_err(err)?;
    let recall = recall_at_tokens(&queries, &slices, &corpus, E2E_BUDGET).map_err(err)?;
    let by_lang = recall_at_passages_by_language(&queries, &ranked_map, &corpus, 100).map_err(err)?;
    let predictions: HashMap<String, String> = queries
        .iter()
        .map(|q| (q.id.clone(), q.answers["fi"][0].clone()))
        .collect();
    let qa = qa_metrics(&predictions, &queries).map_err(err)?;
    let mut report = MetricReport::default();
    report.add_token_recall(&recall).map_err(err)?;
    report.add_passage_recall(&by_lang).map_err(err)?;
    report.add_qa(&qa).map_err(err)?;
    let r_small = recall.per_language["fi"];
    ensure(r_small == 1.0, || format!("R@{E2E_BUDGET}t = {r_small}"))?;
    ensure(qa.em["fi"] == 1.0, || "oracle predictions are not exact matches".into())?;

    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:.1?}"))?;
    Ok(format!(
        "{sentences} sentences: mined-pair recall {mining_recall:.4} ({hit}/{} planted, {false_pairs} extra) in {mine_time:.1?}; \
         {} queries over {} passages: top-1 evidence {top1}/{}, R@{E2E_BUDGET}t = {r_small}, R_any@100 = {}; \
         loss identity gap {worst_identity:.1e}; total {elapsed:.1?} (< 300 s)",
        planted.len(),
        queries.len(),
        corpus.len(),
        queries.len(),
        by_lang.any["fi"],
    ))
}

// ---------------------------------------------------------------------------

fn performance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (n, dim) = (100_000, 64);
    let data = gaussian(&mut rng, n * dim, 1.0);
    let vectors: Vec<DenseVector> = data.chunks(dim).map(|c| DenseVector::new(c.to_vec()).unwrap()).collect();
    drop(data);
    let index = RetrievalIndex::dense(ids("p", n), &vectors).map_err(err)?;
    drop(vectors);
    let mut dense_worst = Duration::ZERO;
    for _ in 0..5 {
        let q = QueryEmbedding::Dense(DenseVector::new(gaussian(&mut rng, dim, 1.0)).unwrap());
        let t = Instant::now();
        let hits = search_topk(&index, &q, 100).map_err(err)?;
        dense_worst = dense_worst.max(t.elapsed());
        ensure(hits.len() == 100, || "short result".into())?;
    }
    drop(index);

    let (cands, tq, td, dim) = (1000, 50, 200, 64);
    let query = MultiVectorEmbedding::new(1, tq, dim, gaussian(&mut rng, tq * dim, 1.0), vec![true; tq]).unwrap();
    let docs: Vec<MultiVectorEmbedding> = (0..cands)
        .map(|_| MultiVectorEmbedding::new(1, td, dim, gaussian(&mut rng, td * dim, 1.0), vec![true; td]).unwrap())
        .collect();
    let doc_ids = ids("d", cands);
    let pairs: Vec<(&str, &MultiVectorEmbedding)> = doc_ids.iter().map(String::as_str).zip(&docs).collect();
    let mut rerank_worst = Duration::ZERO;
    for _ in 0..3 {
        let t = Instant::now();
        let ranked = rerank(&query, &pairs, 0).map_err(err)?;
        rerank_worst = rerank_worst.max(t.elapsed());
        ensure(ranked.len() == cands, || "short rerank".into())?;
    }
    ensure(dense_worst < Duration::from_secs(1), || format!("dense query took {dense_worst:.2?}"))?;
    ensure(rerank_worst < Duration::from_secs(1), || format!("rerank took {rerank_worst:.2?}"))?;
    Ok(format!(
        "dense 100000x64 top-100 worst {dense_worst:.1?} (< 1 s); rerank 1000 x (50x200x64) worst {rerank_worst:.1?} (< 1 s); {} worker threads",
        rayon::current_num_threads()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let checks: [(&str, fn() -> Outcome); 11] = [
        ("oracle equivalence: search_topk == brute_force_topk", oracle_equivalence),
        ("sum-of-max correctness", sum_of_max),
        ("margin mining", margin_mining),
        ("balanced sampling", balanced_sampling),
        ("loss arithmetic", loss_arithmetic),
        ("refresh scheduling", refresh_scheduling),
        ("prompt golden files", prompt_goldens),
        ("wh-word table", wh_word_table),
        ("metrics", metrics),
        ("desk-scale end-to-end", end_to_end),
        ("performance floor", performance),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    println!("acceptance criteria");
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name} [{:.1?}]: {detail}", t.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} [{:.1?}]: {detail}", t.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
