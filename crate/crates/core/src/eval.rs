//! Next-infected-user ranking metrics.
//!
//! At each step the true next user is ranked among the users not yet in the
//! observed prefix. Ties are broken by user index. With a single relevant
//! user per step, MAP@k reduces to the truncated reciprocal rank.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{Cascade, Event};
use crate::model::{DyHgcn, InferenceReps, ModelError};
use crate::graph::DynamicGraph;

pub const DEFAULT_KS: [usize; 3] = [10, 50, 100];

/// Anything that scores every user at every prefix position.
pub trait Scorer: Sync {
    fn num_users(&self) -> usize;

    /// `L x |U|` scores; row `p` ranks candidates for the user at step `p + 1`.
    fn scores(&self, events: &[Event]) -> Result<Tensor, ModelError>;
}

/// A trained model together with its pre-encoded graph.
pub struct ModelScorer<'m> {
    model: &'m DyHgcn,
    reps: InferenceReps,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m DyHgcn, graph: &DynamicGraph) -> Result<Self, ModelError> {
        Ok(Self {
            reps: model.inference_reps(graph)?,
            model,
        })
    }
}

impl Scorer for ModelScorer<'_> {
    fn num_users(&self) -> usize {
        self.model.num_users()
    }

    fn scores(&self, events: &[Event]) -> Result<Tensor, ModelError> {
        self.model.score_events(&self.reps, events)
    }
}

/// Uniform random scores, reproducible per (seed, event sequence).
pub struct RandomScorer {
    pub num_users: usize,
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn num_users(&self) -> usize {
        self.num_users
    }

    fn scores(&self, events: &[Event]) -> Result<Tensor, ModelError> {
        // FNV-1a over the sequence so that parallel evaluation stays deterministic.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for e in events {
            for word in [e.user.0 as u64, e.time.to_bits()] {
                h ^= word;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let data = (0..events.len() * self.num_users).map(|_| rng.random::<f64>()).collect();
        Ok(Tensor::new(&[events.len(), self.num_users], data)?)
    }
}

/// 1-based rank of `target` among users not flagged in `excluded`.
pub fn rank_of_target(scores: &[f64], target: usize, excluded: &[bool]) -> usize {
    let s = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(v, &sv)| v != target && !excluded[v] && (sv > s || (sv == s && v < target)))
        .count()
}

/// Top-`k` users not flagged in `excluded`, best first.
pub fn top_k(scores: &[f64], excluded: &[bool], k: usize) -> Vec<(usize, f64)> {
    let mut candidates: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|&(v, _)| !excluded[v])
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    candidates.truncate(k);
    candidates
}

/// Ranks of the true next user at every step of one cascade.
pub fn cascade_ranks(scores: &Tensor, events: &[Event]) -> Vec<usize> {
    let mut excluded = vec![false; scores.cols()];
    let mut ranks = Vec::with_capacity(events.len().saturating_sub(1));
    for p in 0..events.len().saturating_sub(1) {
        excluded[events[p].user.0] = true;
        ranks.push(rank_of_target(scores.row(p), events[p + 1].user.0, &excluded));
    }
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percentage of steps whose true user ranked within `k`.
    pub hits: BTreeMap<usize, f64>,
    /// Mean truncated reciprocal rank at `k`, as a percentage.
    pub map: BTreeMap<usize, f64>,
    pub scored_steps: usize,
}

impl EvalReport {
    /// Aggregates ranks with every step weighted equally.
    pub fn from_ranks(ranks: &[usize], ks: &[usize]) -> Self {
        let n = ranks.len();
        let mut hits = BTreeMap::new();
        let mut map = BTreeMap::new();
        for &k in ks {
            let (mut h, mut m) = (0.0, 0.0);
            for &r in ranks {
                if r <= k {
                    h += 1.0;
                    m += 1.0 / r as f64;
                }
            }
            let scale = if n == 0 { 0.0 } else { 100.0 / n as f64 };
            hits.insert(k, h * scale);
            map.insert(k, m * scale);
        }
        Self {
            hits,
            map,
            scored_steps: n,
        }
    }

    pub fn hits(&self, k: usize) -> Option<f64> {
        self.hits.get(&k).copied()
    }

    pub fn map(&self, k: usize) -> Option<f64> {
        self.map.get(&k).copied()
    }

    /// Flat key-value block: `hits@K value` and `map@K value` lines.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.hits {
            let _ = writeln!(out, "hits@{k} {v:.4}");
        }
        for (k, v) in &self.map {
            let _ = writeln!(out, "map@{k} {v:.4}");
        }
        let _ = writeln!(out, "scored_steps {}", self.scored_steps);
        out
    }

    /// JSON object keyed by `hits@K` / `map@K`.
    pub fn to_json(&self) -> String {
        let mut obj = serde_json::Map::new();
        for (k, v) in &self.hits {
            obj.insert(format!("hits@{k}"), (*v).into());
        }
        for (k, v) in &self.map {
            obj.insert(format!("map@{k}"), (*v).into());
        }
        obj.insert("scored_steps".into(), self.scored_steps.into());
        serde_json::Value::Object(obj).to_string()
    }

    /// Metrics lie in `[0, 100]` and never decrease with `k`.
    pub fn is_consistent(&self) -> bool {
        let in_range = |m: &BTreeMap<usize, f64>| m.values().all(|v| (0.0..=100.0 + 1e-9).contains(v));
        let monotone = |m: &BTreeMap<usize, f64>| m.values().zip(m.values().skip(1)).all(|(a, b)| a <= b);
        in_range(&self.hits) && in_range(&self.map) && monotone(&self.hits) && monotone(&self.map)
    }
}

/// Scores every cascade (in parallel) and aggregates per-step ranks.
pub fn evaluate<S: Scorer>(scorer: &S, cascades: &[Cascade], ks: &[usize]) -> Result<EvalReport, ModelError> {
    let per_cascade = cascades
        .par_iter()
        .map(|c| {
            let scores = scorer.scores(c.events())?;
            Ok(cascade_ranks(&scores, c.events()))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let ranks: Vec<usize> = per_cascade.into_iter().flatten().collect();
    Ok(EvalReport::from_ranks(&ranks, ks))
}
