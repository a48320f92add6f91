//! Next-infected-user prediction with a dynamic heterogeneous graph
//! convolutional network.
//!
//! Cascades and a follow graph are turned into one heterogeneous snapshot
//! per time interval ([`graph`]). Each snapshot is encoded by graph
//! convolutions over both relations, events pick a time-aware
//! representation, and causally masked self-attention over the observed
//! cascade scores every user as the next one to repost ([`model`]).
//! Everything is differentiated by the small tape engine in [`autodiff`]
//! and trained with Adam ([`train`]); [`eval`] computes Hits@k and MAP@k.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod graph;
pub mod model;
pub mod prepared;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use data::{Cascade, DataError, Event, SocialEdge, UserId, Vocab};
pub use eval::{evaluate, EvalReport, ModelScorer, RandomScorer, Scorer};
pub use graph::{DynamicGraph, GraphError, SparseAdj, TimeIntervals};
pub use model::{ablate, Ablation, DyHgcn, ModelConfig, ModelError, Selection};
pub use prepared::{PreparedData, SplitName};
pub use train::{train, EpochRecord, TrainConfig, TrainError, TrainOutcome, Trainer};
