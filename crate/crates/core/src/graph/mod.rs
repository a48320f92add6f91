//! Time intervals and the per-interval heterogeneous graph snapshots.
//!
//! Every snapshot pairs the shared social adjacency (row = follower,
//! column = followee) with a repost adjacency for its interval
//! (row = later reposter, column = the user reposted from). Both are
//! row-normalized after adding self-loops, so convolving with them averages
//! the states of a user's influencers together with the user's own.

mod sparse;

pub use sparse::SparseAdj;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Cascade, SocialEdge};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("number of time intervals must be at least 1")]
    ZeroIntervals,
    #[error("no events to build a timeline from")]
    NoEvents,
    #[error("interval {index} out of range for {count} intervals")]
    IntervalOutOfRange { index: usize, count: usize },
    #[error("user {user} out of range for {num_users} users")]
    UserOutOfRange { user: usize, num_users: usize },
}

/// Equal-width partition of normalized time `[0, 1]`.
///
/// Interval `j` (0-based) is `[boundaries[j], boundaries[j+1])`; the last one
/// is closed on the right.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeIntervals {
    boundaries: Vec<f64>,
}

impl TimeIntervals {
    pub fn equal_width(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::ZeroIntervals);
        }
        let boundaries = (0..=n).map(|j| j as f64 / n as f64).collect();
        Ok(Self { boundaries })
    }

    pub fn count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Left boundary of interval `j`.
    pub fn start(&self, j: usize) -> f64 {
        self.boundaries[j]
    }

    /// 0-based interval containing `t`; values outside `[0, 1]` are clamped.
    pub fn interval_of(&self, t: f64) -> usize {
        let t = t.clamp(0.0, 1.0);
        let n = self.count();
        // Last j with start(j) <= t, which matches the soft-selection mask.
        self.boundaries[..n].partition_point(|&b| b <= t).saturating_sub(1)
    }

    /// Whether interval `j` has started by time `t`.
    pub fn is_open_at(&self, j: usize, t: f64) -> bool {
        t.clamp(0.0, 1.0) >= self.boundaries[j]
    }
}

/// Splits normalized time into `n` equal intervals. `train` must hold at
/// least one event and be normalized to `[0, 1]`.
pub fn split_timeline(train: &[Cascade], n: usize) -> Result<TimeIntervals, GraphError> {
    if train.iter().all(Cascade::is_empty) {
        return Err(GraphError::NoEvents);
    }
    TimeIntervals::equal_width(n)
}

/// Social adjacency: edge `src -> dst` becomes entry (row `src`, col `dst`),
/// then self-loops are added and rows normalized.
pub fn build_social_adjacency(edges: &[SocialEdge], num_users: usize) -> Result<SparseAdj, GraphError> {
    for e in edges {
        for u in [e.src.0, e.dst.0] {
            if u >= num_users {
                return Err(GraphError::UserOutOfRange { user: u, num_users });
            }
        }
    }
    let raw = SparseAdj::from_triplets(num_users, edges.iter().map(|e| (e.src.0, e.dst.0, 1.0)));
    Ok(raw.normalized_with_self_loops())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotMode {
    /// Snapshot `i` holds every repost up to the end of interval `i`.
    #[default]
    Cumulative,
    /// Snapshot `i` holds only reposts inside interval `i`.
    Local,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Each reposter links to the user immediately before it.
    #[default]
    Consecutive,
    /// Each reposter links to every earlier user of the cascade.
    AllPrev,
}

/// Un-normalized repost counts for interval `index` (0-based).
///
/// `train` must be time-normalized. A pair contributes when the later
/// event's interval falls in the snapshot's window.
pub fn diffusion_counts(train: &[Cascade], intervals: &TimeIntervals, index: usize, mode: SnapshotMode, pairs: PairMode, num_users: usize) -> Result<SparseAdj, GraphError> {
    let count = intervals.count();
    if index >= count {
        return Err(GraphError::IntervalOutOfRange { index, count });
    }
    let in_window = |t: f64| {
        let j = intervals.interval_of(t);
        match mode {
            SnapshotMode::Cumulative => j <= index,
            SnapshotMode::Local => j == index,
        }
    };
    let mut triplets = Vec::new();
    for cascade in train {
        let events = cascade.events();
        if let Some(bad) = events.iter().find(|e| e.user.0 >= num_users) {
            return Err(GraphError::UserOutOfRange {
                user: bad.user.0,
                num_users,
            });
        }
        for k in 1..events.len() {
            let later = events[k];
            if !in_window(later.time) {
                continue;
            }
            let sources = match pairs {
                PairMode::Consecutive => &events[k - 1..k],
                PairMode::AllPrev => &events[..k],
            };
            triplets.extend(sources.iter().map(|src| (later.user.0, src.user.0, 1.0)));
        }
    }
    Ok(SparseAdj::from_triplets(num_users, triplets))
}

/// Normalized repost adjacency for interval `index` (0-based).
pub fn build_diffusion_adjacency(train: &[Cascade], intervals: &TimeIntervals, index: usize, mode: SnapshotMode, pairs: PairMode, num_users: usize) -> Result<SparseAdj, GraphError> {
    Ok(diffusion_counts(train, intervals, index, mode, pairs, num_users)?.normalized_with_self_loops())
}

/// Knobs controlling snapshot construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphOptions {
    pub intervals: usize,
    pub snapshot_mode: SnapshotMode,
    pub pair_mode: PairMode,
    /// When false the social adjacency is replaced by the identity.
    pub use_social: bool,
    /// When false every repost adjacency is replaced by the identity.
    pub use_diffusion: bool,
}

/// One heterogeneous snapshot `{social, diffusion_i}`.
#[derive(Clone, Copy, Debug)]
pub struct HeteroSnapshot<'g> {
    pub index: usize,
    pub social: &'g SparseAdj,
    pub diffusion: &'g SparseAdj,
}

/// All snapshots of a dataset; the social adjacency is stored once.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicGraph {
    pub intervals: TimeIntervals,
    pub social: SparseAdj,
    pub diffusion: Vec<SparseAdj>,
}

impl DynamicGraph {
    /// Builds every snapshot from time-normalized training cascades only.
    pub fn build(train: &[Cascade], edges: &[SocialEdge], num_users: usize, options: &GraphOptions) -> Result<Self, GraphError> {
        let intervals = split_timeline(train, options.intervals)?;
        let social = if options.use_social {
            build_social_adjacency(edges, num_users)?
        } else {
            SparseAdj::identity(num_users)
        };
        let diffusion = (0..intervals.count())
            .into_par_iter()
            .map(|i| {
                if options.use_diffusion {
                    build_diffusion_adjacency(train, &intervals, i, options.snapshot_mode, options.pair_mode, num_users)
                } else {
                    Ok(SparseAdj::identity(num_users))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            intervals,
            social,
            diffusion,
        })
    }

    pub fn num_users(&self) -> usize {
        self.social.num_nodes()
    }

    pub fn snapshots(&self) -> impl Iterator<Item = HeteroSnapshot<'_>> {
        self.diffusion.iter().enumerate().map(|(index, diffusion)| HeteroSnapshot {
            index,
            social: &self.social,
            diffusion,
        })
    }
}
