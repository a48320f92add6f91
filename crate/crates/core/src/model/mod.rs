//! The dynamic heterogeneous graph convolutional network.
//!
//! Pipeline for one cascade:
//!
//! 1. every snapshot is encoded by a stack of relation-specific graph
//!    convolutions whose two outputs are fused after each layer
//!    ([`hgcn_layer`], [`fuse`], [`DyHgcn::encode`]);
//! 2. each event `(user, t)` picks a representation from the per-interval
//!    outputs, either the interval containing `t` ([`hard_select`]) or an
//!    attention-weighted mix of all intervals that have started by `t`
//!    ([`soft_select`]);
//! 3. the selected rows go through causally masked multi-head
//!    self-attention ([`masked_self_attention`]);
//! 4. a two-layer head scores every user as the next one to be infected
//!    ([`predict_scores`]).

mod config;

pub use config::{ablate, Ablation, ModelConfig, Selection};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var, MASK_SENTINEL};
use crate::data::{Cascade, Event};
use crate::graph::{DynamicGraph, GraphError, HeteroSnapshot, TimeIntervals};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("user {user} out of range for {num_users} users")]
    UserOutOfRange { user: usize, num_users: usize },
    #[error("empty event sequence")]
    EmptySequence,
    #[error("graph has {graph} users, model has {model}")]
    GraphMismatch { graph: usize, model: usize },
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
}

struct HeadIds {
    query: ParamId,
    key: ParamId,
    value: ParamId,
}

struct ParamIds {
    user_embedding: ParamId,
    time_embedding: ParamId,
    w_social: Vec<ParamId>,
    w_repost: Vec<ParamId>,
    w_fuse: ParamId,
    heads: Vec<HeadIds>,
    w_output: ParamId,
    w2: ParamId,
    b1: ParamId,
    w3: ParamId,
    b2: ParamId,
}

/// Parameter handles bound onto one tape.
pub struct Bound {
    pub user_embedding: Var,
    pub time_embedding: Var,
    pub w_social: Vec<Var>,
    pub w_repost: Vec<Var>,
    pub w_fuse: Var,
    /// `(query, key, value)` projections per head.
    pub heads: Vec<(Var, Var, Var)>,
    pub w_output: Var,
    pub w2: Var,
    pub b1: Var,
    pub w3: Var,
    pub b2: Var,
}

/// Where the per-interval representation of sequence position `k` lives:
/// row `interval * stride + local[k]` of `table`.
pub struct SelectionTable {
    pub table: Var,
    pub stride: usize,
    pub local: Vec<usize>,
}

impl SelectionTable {
    pub fn row(&self, interval: usize, position: usize) -> usize {
        interval * self.stride + self.local[position]
    }
}

/// Handles to the interesting nodes of one forward pass.
pub struct ForwardTrace {
    /// `L x |U|` raw scores; row `p` scores the user infected at step `p + 1`.
    pub scores: Var,
    /// Per-position interval weights (`1 x n`); empty under hard selection.
    pub selection_weights: Vec<Var>,
    /// Per-head `L x L` attention weights.
    pub attention: Vec<Var>,
}

/// Per-interval user representations with values detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceReps {
    /// One `|U| x d` matrix per interval, or just the raw embedding table
    /// when graph encoding is disabled.
    pub tables: Vec<Tensor>,
    pub intervals: TimeIntervals,
}

/// Loss and gradients of one mini-batch.
pub struct BatchLoss {
    pub loss: f64,
    pub steps: usize,
    pub grads: Vec<Tensor>,
}

/// One graph-convolution round on both relations:
/// `X_F = ReLU(A_F X W_F)` and `X_R = ReLU(A_R (X + t) W_R)`.
pub fn hgcn_layer<'a>(tape: &mut Tape<'a>, x: Var, snapshot: HeteroSnapshot<'a>, time_row: Var, w_social: Var, w_repost: Var) -> Result<(Var, Var), ModelError> {
    let social = tape.sparse_matmul(snapshot.social, x)?;
    let social = tape.matmul(social, w_social)?;
    let x_social = tape.relu(social)?;

    let shifted = tape.add_row(x, time_row)?;
    let repost = tape.sparse_matmul(snapshot.diffusion, shifted)?;
    let repost = tape.matmul(repost, w_repost)?;
    let x_repost = tape.relu(repost)?;
    Ok((x_social, x_repost))
}

/// `[X_F ; X_R ; X_F ⊙ X_R ; X_F − X_R] · W_1`.
pub fn fuse(tape: &mut Tape<'_>, x_social: Var, x_repost: Var, w_fuse: Var) -> Result<Var, ModelError> {
    let product = tape.mul(x_social, x_repost)?;
    let difference = tape.sub(x_social, x_repost)?;
    let blocks = tape.concat_cols(&[x_social, x_repost, product, difference])?;
    Ok(tape.matmul(blocks, w_fuse)?)
}

/// Row of the interval containing each event time.
pub fn hard_select(tape: &mut Tape<'_>, table: &SelectionTable, intervals: &TimeIntervals, times: &[f64]) -> Result<Var, ModelError> {
    let rows: Vec<usize> = times
        .iter()
        .enumerate()
        .map(|(k, &t)| table.row(intervals.interval_of(t), k))
        .collect();
    Ok(tape.lookup(table.table, &rows)?)
}

/// Additive mask over intervals: open (`t >= start_j`) or switched off.
pub fn interval_mask(intervals: &TimeIntervals, t: f64) -> Tensor {
    let n = intervals.count();
    let data = (0..n)
        .map(|j| if intervals.is_open_at(j, t) { 0.0 } else { MASK_SENTINEL })
        .collect();
    Tensor::new(&[1, n], data).expect("n >= 1")
}

/// Time-aware attention over each user's interval representations.
///
/// For event `(u, t)` with `U_t` the `n x d` stack of `u`'s rows and `τ` the
/// time embedding of the interval containing `t`:
/// `α = softmax(U_t τ / sqrt(d) + m)` and the output row is `αᵀ U_t`.
/// Returns the `L x d` selection and each event's `1 x n` weights.
pub fn soft_select(tape: &mut Tape<'_>, table: &SelectionTable, intervals: &TimeIntervals, time_embedding: Var, times: &[f64]) -> Result<(Var, Vec<Var>), ModelError> {
    let n = intervals.count();
    let dim = tape.value(time_embedding).cols();
    let inv_sqrt_d = 1.0 / (dim as f64).sqrt();
    let mut rows = Vec::with_capacity(times.len());
    let mut weights = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let idx: Vec<usize> = (0..n).map(|j| table.row(j, k)).collect();
        let stacked = tape.lookup(table.table, &idx)?;
        let query = tape.lookup(time_embedding, &[intervals.interval_of(t)])?;
        let stacked_t = tape.transpose(stacked)?;
        let logits = tape.matmul(query, stacked_t)?;
        let logits = tape.scale(logits, inv_sqrt_d)?;
        let alpha = tape.softmax(logits, Some(&interval_mask(intervals, t)))?;
        rows.push(tape.matmul(alpha, stacked)?);
        weights.push(alpha);
    }
    Ok((tape.concat_rows(&rows)?, weights))
}

/// Additive mask letting position `p` attend to positions `q <= p` only.
pub fn causal_mask(len: usize) -> Tensor {
    let data = (0..len * len)
        .map(|i| if i % len <= i / len { 0.0 } else { MASK_SENTINEL })
        .collect();
    Tensor::new(&[len, len], data).expect("len >= 1")
}

/// Multi-head scaled dot-product self-attention under [`causal_mask`].
/// Returns `Z` (`L x d`) and every head's attention weights.
pub fn masked_self_attention(tape: &mut Tape<'_>, input: Var, heads: &[(Var, Var, Var)], w_output: Var) -> Result<(Var, Vec<Var>), ModelError> {
    let len = tape.value(input).rows();
    let mask = causal_mask(len);
    let mut outputs = Vec::with_capacity(heads.len());
    let mut weights = Vec::with_capacity(heads.len());
    for &(wq, wk, wv) in heads {
        let head_dim = tape.value(wq).cols();
        let q = tape.matmul(input, wq)?;
        let k = tape.matmul(input, wk)?;
        let v = tape.matmul(input, wv)?;
        let k_t = tape.transpose(k)?;
        let scores = tape.matmul(q, k_t)?;
        let scores = tape.scale(scores, 1.0 / (head_dim as f64).sqrt())?;
        let attn = tape.softmax(scores, Some(&mask))?;
        outputs.push(tape.matmul(attn, v)?);
        weights.push(attn);
    }
    let joined = tape.concat_cols(&outputs)?;
    Ok((tape.matmul(joined, w_output)?, weights))
}

/// `ŷ = W_3 ReLU(W_2 Zᵀ + b_1) + b_2`, laid out as `L x |U|`.
pub fn predict_scores(tape: &mut Tape<'_>, z: Var, w2: Var, b1: Var, w3: Var, b2: Var) -> Result<Var, ModelError> {
    let w2_t = tape.transpose(w2)?;
    let hidden = tape.linear(z, w2_t, b1)?;
    let hidden = tape.relu(hidden)?;
    let w3_t = tape.transpose(w3)?;
    Ok(tape.linear(hidden, w3_t, b2)?)
}

/// Next-user targets for teacher-forced training: row `p` predicts event `p + 1`.
pub fn next_user_targets(events: &[Event]) -> Vec<Option<usize>> {
    (0..events.len())
        .map(|p| events.get(p + 1).map(|e| e.user.0))
        .collect()
}

/// A trainable model instance.
pub struct DyHgcn {
    config: ModelConfig,
    num_users: usize,
    params: ParamStore,
    ids: ParamIds,
}

impl DyHgcn {
    /// Expected parameter names and shapes, in storage order.
    pub fn parameter_layout(config: &ModelConfig, num_users: usize) -> Vec<(String, Vec<usize>, usize)> {
        let d = config.dim;
        let dk = config.head_dim();
        let mut layout = vec![
            ("user_embedding".to_string(), vec![num_users, d], 1),
            ("time_embedding".to_string(), vec![config.intervals, d], 1),
        ];
        for l in 0..config.gcn_layers {
            layout.push((format!("gcn.{l}.w_social"), vec![d, d], d.div_ceil(2)));
            layout.push((format!("gcn.{l}.w_repost"), vec![d, d], d.div_ceil(2)));
        }
        layout.push(("fuse.w1".to_string(), vec![4 * d, d], 4 * d));
        for h in 0..config.heads {
            for part in ["query", "key", "value"] {
                layout.push((format!("attn.{h}.{part}"), vec![d, dk], d));
            }
        }
        layout.push(("attn.output".to_string(), vec![config.heads * dk, d], config.heads * dk));
        layout.push(("out.w2".to_string(), vec![d, d], d));
        layout.push(("out.b1".to_string(), vec![d], 0));
        layout.push(("out.w3".to_string(), vec![num_users, d], d));
        layout.push(("out.b2".to_string(), vec![num_users], 0));
        layout
    }

    /// Weights drawn from `N(0, 1/fan_in)`; biases start at zero.
    pub fn new(config: ModelConfig, num_users: usize, seed: u64) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        if num_users == 0 {
            return Err(ModelError::Config("model needs at least one user".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, fan_in) in Self::parameter_layout(&config, num_users) {
            if fan_in == 0 {
                params.insert(name, Tensor::zeros(&shape));
            } else {
                params.insert_normal(name, &shape, fan_in, &mut rng);
            }
        }
        Self::from_params(config, num_users, params)
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: ModelConfig, num_users: usize, params: ParamStore) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        let layout = Self::parameter_layout(&config, num_users);
        if layout.len() != params.len() {
            return Err(ModelError::ParamMismatch(format!("expected {} tensors, found {}", layout.len(), params.len())));
        }
        for ((name, shape, _), (_, have_name, have)) in layout.iter().zip(params.iter()) {
            if name != have_name || shape.as_slice() != have.shape() {
                return Err(ModelError::ParamMismatch(format!("expected {name} {shape:?}, found {have_name} {:?}", have.shape())));
            }
        }
        let id = |name: &str| params.id_of(name).expect("layout checked");
        let ids = ParamIds {
            user_embedding: id("user_embedding"),
            time_embedding: id("time_embedding"),
            w_social: (0..config.gcn_layers).map(|l| id(&format!("gcn.{l}.w_social"))).collect(),
            w_repost: (0..config.gcn_layers).map(|l| id(&format!("gcn.{l}.w_repost"))).collect(),
            w_fuse: id("fuse.w1"),
            heads: (0..config.heads)
                .map(|h| HeadIds {
                    query: id(&format!("attn.{h}.query")),
                    key: id(&format!("attn.{h}.key")),
                    value: id(&format!("attn.{h}.value")),
                })
                .collect(),
            w_output: id("attn.output"),
            w2: id("out.w2"),
            b1: id("out.b1"),
            w3: id("out.w3"),
            b2: id("out.b2"),
        };
        Ok(Self {
            config,
            num_users,
            params,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Result<Bound, ModelError> {
        let p = &self.params;
        let ids = &self.ids;
        let mut bind = |id| tape.param(p, id);
        Ok(Bound {
            user_embedding: bind(ids.user_embedding)?,
            time_embedding: bind(ids.time_embedding)?,
            w_social: ids.w_social.iter().map(|&i| bind(i)).collect::<Result<_, _>>()?,
            w_repost: ids.w_repost.iter().map(|&i| bind(i)).collect::<Result<_, _>>()?,
            w_fuse: bind(ids.w_fuse)?,
            heads: ids
                .heads
                .iter()
                .map(|h| Ok((bind(h.query)?, bind(h.key)?, bind(h.value)?)))
                .collect::<Result<_, AutodiffError>>()?,
            w_output: bind(ids.w_output)?,
            w2: bind(ids.w2)?,
            b1: bind(ids.b1)?,
            w3: bind(ids.w3)?,
            b2: bind(ids.b2)?,
        })
    }

    fn check_graph(&self, graph: &DynamicGraph) -> Result<(), ModelError> {
        if graph.num_users() != self.num_users {
            return Err(ModelError::GraphMismatch {
                graph: graph.num_users(),
                model: self.num_users,
            });
        }
        if graph.intervals.count() != self.config.intervals {
            return Err(ModelError::Config(format!(
                "graph has {} intervals, model expects {}",
                graph.intervals.count(),
                self.config.intervals
            )));
        }
        Ok(())
    }

    fn check_events(&self, events: &[Event]) -> Result<(), ModelError> {
        if events.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if let Some(e) = events.iter().find(|e| e.user.0 >= self.num_users) {
            return Err(ModelError::UserOutOfRange {
                user: e.user.0,
                num_users: self.num_users,
            });
        }
        Ok(())
    }

    /// Encodes every snapshot. Each interval starts from the shared user
    /// embeddings; layer weights are shared across intervals.
    pub fn encode<'a>(&self, tape: &mut Tape<'a>, bound: &Bound, graph: &'a DynamicGraph) -> Result<Vec<Var>, ModelError> {
        self.check_graph(graph)?;
        let mut reps = Vec::with_capacity(graph.diffusion.len());
        for snapshot in graph.snapshots() {
            let time_row = tape.lookup(bound.time_embedding, &[snapshot.index])?;
            let mut x = bound.user_embedding;
            for l in 0..self.config.gcn_layers {
                let (xf, xr) = hgcn_layer(tape, x, snapshot, time_row, bound.w_social[l], bound.w_repost[l])?;
                x = fuse(tape, xf, xr, bound.w_fuse)?;
            }
            reps.push(x);
        }
        Ok(reps)
    }

    /// Stacks interval representations into one lookup table with stride `|U|`;
    /// without graph encoding the raw embeddings are used with stride 0.
    pub fn selection_source(&self, tape: &mut Tape<'_>, bound: &Bound, reps: &[Var]) -> Result<(Var, usize), ModelError> {
        if self.config.use_heterograph {
            Ok((tape.concat_rows(reps)?, self.num_users))
        } else {
            Ok((bound.user_embedding, 0))
        }
    }

    /// Selection, masked self-attention and scoring for one event sequence
    /// with normalized times.
    pub fn forward(&self, tape: &mut Tape<'_>, bound: &Bound, table: &SelectionTable, intervals: &TimeIntervals, times: &[f64]) -> Result<ForwardTrace, ModelError> {
        if times.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let (selected, selection_weights) = match self.config.selection {
            Selection::Hard => (hard_select(tape, table, intervals, times)?, Vec::new()),
            Selection::Soft => soft_select(tape, table, intervals, bound.time_embedding, times)?,
        };
        let (z, attention) = masked_self_attention(tape, selected, &bound.heads, bound.w_output)?;
        let scores = predict_scores(tape, z, bound.w2, bound.b1, bound.w3, bound.b2)?;
        Ok(ForwardTrace {
            scores,
            selection_weights,
            attention,
        })
    }

    /// Records the summed next-user cross-entropy of `batch` on `tape`.
    /// Cascades must be time-normalized. Returns the loss node and the
    /// number of scored steps.
    pub fn record_loss<'a>(&'a self, tape: &mut Tape<'a>, graph: &'a DynamicGraph, batch: &[Cascade]) -> Result<(Var, usize), ModelError> {
        let bound = self.bind(tape)?;
        let reps = if self.config.use_heterograph {
            self.encode(tape, &bound, graph)?
        } else {
            self.check_graph(graph)?;
            Vec::new()
        };
        let (source, stride) = self.selection_source(tape, &bound, &reps)?;
        let mut losses = Vec::with_capacity(batch.len());
        let mut steps = 0;
        for cascade in batch {
            let events = cascade.events();
            self.check_events(events)?;
            let table = SelectionTable {
                table: source,
                stride,
                local: events.iter().map(|e| e.user.0).collect(),
            };
            let times: Vec<f64> = events.iter().map(|e| e.time).collect();
            let trace = self.forward(tape, &bound, &table, &graph.intervals, &times)?;
            let targets = next_user_targets(events);
            steps += targets.iter().flatten().count();
            losses.push(tape.softmax_cross_entropy(trace.scores, &targets)?);
        }
        if losses.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let stacked = tape.concat_rows(&losses)?;
        Ok((tape.sum(stacked)?, steps))
    }

    pub fn loss(&self, graph: &DynamicGraph, batch: &[Cascade]) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let (loss, _) = self.record_loss(&mut tape, graph, batch)?;
        Ok(tape.value(loss).item())
    }

    pub fn loss_and_grads(&self, graph: &DynamicGraph, batch: &[Cascade]) -> Result<BatchLoss, ModelError> {
        let mut tape = Tape::new();
        let (loss, steps) = self.record_loss(&mut tape, graph, batch)?;
        let grads = tape.backward(loss)?.for_params(&self.params);
        Ok(BatchLoss {
            loss: tape.value(loss).item(),
            steps,
            grads,
        })
    }

    /// Encodes the graph once for repeated scoring.
    pub fn inference_reps(&self, graph: &DynamicGraph) -> Result<InferenceReps, ModelError> {
        self.check_graph(graph)?;
        let tables = if self.config.use_heterograph {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape)?;
            let reps = self.encode(&mut tape, &bound, graph)?;
            reps.iter().map(|&v| tape.value(v).clone()).collect()
        } else {
            vec![self.params.get(self.ids.user_embedding).clone()]
        };
        Ok(InferenceReps {
            tables,
            intervals: graph.intervals.clone(),
        })
    }

    /// `L x |U|` scores for a time-normalized event prefix.
    pub fn score_events(&self, reps: &InferenceReps, events: &[Event]) -> Result<Tensor, ModelError> {
        self.check_events(events)?;
        let len = events.len();
        let d = self.config.dim;
        let mut compact = Vec::with_capacity(reps.tables.len() * len * d);
        for table in &reps.tables {
            for e in events {
                compact.extend_from_slice(table.row(e.user.0));
            }
        }
        let compact = Tensor::new(&[reps.tables.len() * len, d], compact)?;
        let stride = if self.config.use_heterograph { len } else { 0 };

        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let table = SelectionTable {
            table: tape.leaf(compact)?,
            stride,
            local: (0..len).collect(),
        };
        let times: Vec<f64> = events.iter().map(|e| e.time).collect();
        let trace = self.forward(&mut tape, &bound, &table, &reps.intervals, &times)?;
        Ok(tape.value(trace.scores).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UserId;
    use crate::graph::{build_social_adjacency, SparseAdj};
    use crate::data::SocialEdge;

    fn leaf(tape: &mut Tape<'_>, rows: &[Vec<f64>]) -> Var {
        tape.leaf(Tensor::from_rows(rows).unwrap()).unwrap()
    }

    fn dense_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        a.iter()
            .map(|row| (0..b[0].len()).map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
            .collect()
    }

    #[test]
    fn hgcn_layer_zero_input_gives_zero() {
        let adj = SparseAdj::identity(3);
        let snap = HeteroSnapshot {
            index: 0,
            social: &adj,
            diffusion: &adj,
        };
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3, 2])).unwrap();
        let t = tape.leaf(Tensor::zeros(&[1, 2])).unwrap();
        let w = leaf(&mut tape, &[vec![1.0, -2.0], vec![0.5, 3.0]]);
        let (xf, xr) = hgcn_layer(&mut tape, x, snap, t, w, w).unwrap();
        assert!(tape.value(xf).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(xr).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hgcn_layer_identity_propagation() {
        let adj = SparseAdj::identity(2);
        let snap = HeteroSnapshot {
            index: 0,
            social: &adj,
            diffusion: &adj,
        };
        let mut tape = Tape::new();
        let rows = vec![vec![0.5, 1.0], vec![2.0, 0.0]];
        let x = leaf(&mut tape, &rows);
        let t = tape.leaf(Tensor::zeros(&[1, 2])).unwrap();
        let w = tape.leaf(Tensor::identity(2)).unwrap();
        let (xf, _) = hgcn_layer(&mut tape, x, snap, t, w, w).unwrap();
        assert_eq!(tape.value(xf), &Tensor::from_rows(&rows).unwrap());
    }

    #[test]
    fn hgcn_layer_matches_dense_reference() {
        let social = build_social_adjacency(&[SocialEdge { src: UserId(0), dst: UserId(1) }], 2).unwrap();
        let diffusion = SparseAdj::from_triplets(2, [(1, 0, 1.0)]).normalized_with_self_loops();
        let snap = HeteroSnapshot {
            index: 0,
            social: &social,
            diffusion: &diffusion,
        };
        let x = vec![vec![0.3, -1.2, 0.7], vec![-0.4, 0.9, 1.5]];
        let t = vec![vec![0.2, 0.1, -0.3]];
        let wf = vec![vec![0.5, -0.1, 0.3], vec![0.2, 0.8, -0.6], vec![-0.7, 0.4, 0.9]];
        let wr = vec![vec![-0.2, 0.6, 0.1], vec![0.9, -0.3, 0.4], vec![0.3, 0.5, -0.8]];

        let mut tape = Tape::new();
        let (xv, tv, wfv, wrv) = (leaf(&mut tape, &x), leaf(&mut tape, &t), leaf(&mut tape, &wf), leaf(&mut tape, &wr));
        let (xf, xr) = hgcn_layer(&mut tape, xv, snap, tv, wfv, wrv).unwrap();

        let relu = |m: Vec<Vec<f64>>| m.into_iter().map(|r| r.into_iter().map(|v: f64| v.max(0.0)).collect()).collect::<Vec<Vec<f64>>>();
        let a_f = vec![vec![0.5, 0.5], vec![0.0, 1.0]];
        let a_r = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        let shifted: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(&t[0]).map(|(a, b)| a + b).collect()).collect();
        let want_f = relu(dense_matmul(&dense_matmul(&a_f, &x), &wf));
        let want_r = relu(dense_matmul(&dense_matmul(&a_r, &shifted), &wr));
        for (got, want) in [(tape.value(xf), want_f), (tape.value(xr), want_r)] {
            for (g, w) in got.data().iter().zip(want.concat()) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn fuse_blocks() {
        let mut tape = Tape::new();
        let a = vec![vec![1.0, -2.0], vec![0.5, 3.0], vec![-1.0, 0.25]];
        let b = vec![vec![0.0, 4.0], vec![2.0, -1.0], vec![1.5, 1.0]];
        let w: Vec<Vec<f64>> = (0..8).map(|i| vec![0.1 * i as f64, 1.0 - 0.2 * i as f64]).collect();
        let (av, bv, wv) = (leaf(&mut tape, &a), leaf(&mut tape, &b), leaf(&mut tape, &w));
        let out = fuse(&mut tape, av, bv, wv).unwrap();
        let blocks: Vec<Vec<f64>> = a
            .iter()
            .zip(&b)
            .map(|(ra, rb)| {
                let mut row = ra.clone();
                row.extend(rb);
                row.extend(ra.iter().zip(rb).map(|(x, y)| x * y));
                row.extend(ra.iter().zip(rb).map(|(x, y)| x - y));
                row
            })
            .collect();
        let want = dense_matmul(&blocks, &w).concat();
        for (g, w) in tape.value(out).data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }

        let same = fuse(&mut tape, av, av, wv).unwrap();
        let zero = tape.leaf(Tensor::zeros(&[3, 2])).unwrap();
        let zero_out = fuse(&mut tape, zero, zero, wv).unwrap();
        assert!(tape.value(zero_out).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(same).all_finite());
    }

    #[test]
    fn causal_mask_layout() {
        let m = causal_mask(3);
        assert_eq!(m.row(0), &[0.0, MASK_SENTINEL, MASK_SENTINEL]);
        assert_eq!(m.row(2), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn soft_select_masks_future_intervals() {
        let iv = TimeIntervals::equal_width(4).unwrap();
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor::new(&[4, 2], vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0, -1.0, 3.0]).unwrap()).unwrap();
        let time = tape.leaf(Tensor::new(&[4, 2], vec![0.3, -0.1, 0.2, 0.4, -0.5, 0.1, 0.0, 1.0]).unwrap()).unwrap();
        let sel = SelectionTable { table, stride: 1, local: vec![0] };
        let (out, alphas) = soft_select(&mut tape, &sel, &iv, time, &[0.1]).unwrap();
        let alpha = tape.value(alphas[0]).data();
        assert_eq!(alpha, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(tape.value(out).data(), &[1.0, 0.0]);
    }

    #[test]
    fn soft_select_three_intervals_hand_computed() {
        let iv = TimeIntervals::equal_width(3).unwrap();
        let u = [[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let tau = [0.4, -0.2];
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor::new(&[3, 2], u.concat()).unwrap()).unwrap();
        // All three time rows equal to tau: the query at t' = 0.9 (interval 3) is tau.
        let time = tape.leaf(Tensor::new(&[3, 2], [tau, tau, tau].concat()).unwrap()).unwrap();
        let sel = SelectionTable { table, stride: 1, local: vec![0] };
        let (out, alphas) = soft_select(&mut tape, &sel, &iv, time, &[0.9]).unwrap();

        // logits = u_j · tau / sqrt(2) = [0, 0.4, 1.2] / sqrt(2)
        let s = 2f64.sqrt();
        let e = [0.0f64, 0.4 / s, 1.2 / s].map(f64::exp);
        let z: f64 = e.iter().sum();
        let alpha = e.map(|x| x / z);
        let want = [
            alpha[0] * 1.0 + alpha[1] * 0.5 + alpha[2] * 3.0,
            alpha[0] * 2.0 - alpha[1] + alpha[2] * 0.0,
        ];
        for (g, w) in tape.value(alphas[0]).data().iter().zip(alpha) {
            assert!((g - w).abs() < 1e-12);
        }
        for (g, w) in tape.value(out).data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_single_position_is_value_projection() {
        let mut tape = Tape::new();
        let u = leaf(&mut tape, &[vec![0.3, -0.7]]);
        let wq = leaf(&mut tape, &[vec![1.0], vec![2.0]]);
        let wk = leaf(&mut tape, &[vec![-1.0], vec![0.5]]);
        let wv = leaf(&mut tape, &[vec![2.0], vec![1.0]]);
        let wo = leaf(&mut tape, &[vec![1.0, -1.0]]);
        let (z, weights) = masked_self_attention(&mut tape, u, &[(wq, wk, wv)], wo).unwrap();
        assert_eq!(tape.value(weights[0]).data(), &[1.0]);
        let v = 0.3 * 2.0 - 0.7;
        assert!((tape.value(z).data()[0] - v).abs() < 1e-15);
        assert!((tape.value(z).data()[1] + v).abs() < 1e-15);
    }

    #[test]
    fn attention_two_positions_hand_computed() {
        let mut tape = Tape::new();
        let u = leaf(&mut tape, &[vec![1.0, 0.0], vec![0.5, 2.0]]);
        let wq = leaf(&mut tape, &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let wk = leaf(&mut tape, &[vec![2.0, 0.0], vec![0.0, 1.0]]);
        let wv = leaf(&mut tape, &[vec![1.0, 1.0], vec![0.0, 1.0]]);
        let wo = leaf(&mut tape, &[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let (z, _) = masked_self_attention(&mut tape, u, &[(wq, wk, wv)], wo).unwrap();

        // Position 0 attends only to itself: v0 = [1, 1].
        // Position 1: q1 = [0.5, 2], k0 = [2, 0], k1 = [1, 2];
        // scores / sqrt(2) = [1, 4.5] / sqrt(2); v1 = [0.5, 2.5].
        let s = 2f64.sqrt();
        let (e0, e1) = ((1.0 / s).exp(), (4.5 / s).exp());
        let (a0, a1) = (e0 / (e0 + e1), e1 / (e0 + e1));
        let h1 = [a0 * 1.0 + a1 * 0.5, a0 * 1.0 + a1 * 2.5];
        let want = [1.0, 2.0, h1[0], 2.0 * h1[1]];
        for (g, w) in tape.value(z).data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn predict_scores_zero_and_bias_dominance() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(&[3, 2])).unwrap();
        let w2 = leaf(&mut tape, &[vec![0.3, 0.1], vec![-0.2, 0.4]]);
        let b1 = tape.leaf(Tensor::zeros(&[2])).unwrap();
        let w3 = leaf(&mut tape, &[vec![1.0, 2.0], vec![0.5, -1.0], vec![0.0, 1.0], vec![2.0, 2.0]]);
        let b2 = tape.leaf(Tensor::zeros(&[4])).unwrap();
        let y = predict_scores(&mut tape, z, w2, b1, w3, b2).unwrap();
        assert_eq!(tape.value(y).shape(), &[3, 4]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

        let b2 = tape.leaf(Tensor::new(&[4], vec![0.0, 0.0, 50.0, 0.0]).unwrap()).unwrap();
        let y = predict_scores(&mut tape, z, w2, b1, w3, b2).unwrap();
        for p in 0..3 {
            let row = tape.value(y).row(p);
            let best = (0..4).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(best, 2);
        }
    }

    #[test]
    fn predict_scores_dense_reference() {
        let z = vec![vec![0.2, -0.5], vec![1.0, 0.3]];
        let w2 = vec![vec![0.3, 0.1], vec![-0.2, 0.4]];
        let b1 = vec![0.05, -0.1];
        let w3 = vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![0.0, 1.0]];
        let b2 = vec![0.1, 0.2, 0.3];
        let mut tape = Tape::new();
        let (zv, w2v, w3v) = (leaf(&mut tape, &z), leaf(&mut tape, &w2), leaf(&mut tape, &w3));
        let b1v = tape.leaf(Tensor::new(&[2], b1.clone()).unwrap()).unwrap();
        let b2v = tape.leaf(Tensor::new(&[3], b2.clone()).unwrap()).unwrap();
        let y = predict_scores(&mut tape, zv, w2v, b1v, w3v, b2v).unwrap();
        for (p, zr) in z.iter().enumerate() {
            let hidden: Vec<f64> = (0..2)
                .map(|i| (w2[i][0] * zr[0] + w2[i][1] * zr[1] + b1[i]).max(0.0))
                .collect();
            for u in 0..3 {
                let want = w3[u][0] * hidden[0] + w3[u][1] * hidden[1] + b2[u];
                assert!((tape.value(y).get(p, u) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parameter_shapes() {
        let config = ModelConfig {
            dim: 8,
            intervals: 2,
            heads: 2,
            ..ModelConfig::desk()
        };
        let model = DyHgcn::new(config, 5, 0).unwrap();
        let p = model.params();
        assert_eq!(p.get(p.id_of("fuse.w1").unwrap()).shape(), &[32, 8]);
        assert_eq!(p.get(p.id_of("attn.1.key").unwrap()).shape(), &[8, 4]);
        assert_eq!(p.get(p.id_of("out.w3").unwrap()).shape(), &[5, 8]);
        assert!(p.get(p.id_of("out.b2").unwrap()).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn from_params_rejects_wrong_vocab() {
        let model = DyHgcn::new(ModelConfig::desk(), 5, 0).unwrap();
        let params = model.into_params();
        let err = DyHgcn::from_params(ModelConfig::desk(), 6, params).err().unwrap();
        assert!(matches!(err, ModelError::ParamMismatch(ref m) if m.contains("user_embedding")));
    }
}
