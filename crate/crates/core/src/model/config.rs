use serde::{Deserialize, Serialize};

use crate::graph::{GraphOptions, PairMode, SnapshotMode};

/// How a user's per-interval representations become one vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Row of the interval containing the repost time.
    Hard,
    /// Time-aware attention over every interval that has started.
    #[default]
    Soft,
}

/// Architecture hyperparameters. Serialized as flat `key = value` TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width `d`.
    pub dim: usize,
    /// Number of time intervals `n`.
    pub intervals: usize,
    /// Attention heads `H`; each head has width `floor(d / H)`.
    pub heads: usize,
    /// Graph convolution depth.
    pub gcn_layers: usize,
    pub selection: Selection,
    pub snapshot_mode: SnapshotMode,
    pub pair_mode: PairMode,
    pub use_social: bool,
    pub use_diffusion: bool,
    /// When false, graph encoding is skipped and raw user embeddings feed
    /// the selection step directly.
    pub use_heterograph: bool,
}

impl ModelConfig {
    /// Hyperparameters used for the published experiments.
    pub fn paper() -> Self {
        Self {
            dim: 64,
            intervals: 8,
            heads: 14,
            gcn_layers: 2,
            ..Self::desk()
        }
    }

    /// Small profile for quick local runs.
    pub fn desk() -> Self {
        Self {
            dim: 16,
            intervals: 4,
            heads: 4,
            gcn_layers: 2,
            selection: Selection::Soft,
            snapshot_mode: SnapshotMode::Cumulative,
            pair_mode: PairMode::Consecutive,
            use_social: true,
            use_diffusion: true,
            use_heterograph: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.dim == 0 {
            return Err("dim must be positive".into());
        }
        if self.intervals == 0 {
            return Err("intervals must be positive".into());
        }
        if self.gcn_layers == 0 {
            return Err("gcn_layers must be positive".into());
        }
        if self.heads == 0 || self.head_dim() == 0 {
            return Err(format!("{} heads leave no width per head at dim {}", self.heads, self.dim));
        }
        Ok(())
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            intervals: self.intervals,
            snapshot_mode: self.snapshot_mode,
            pair_mode: self.pair_mode,
            use_social: self.use_social,
            use_diffusion: self.use_diffusion,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let config: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// An ablation of the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    WithoutTimeAwareAttention,
    WithoutSocialGraph,
    WithoutDiffusionGraph,
    WithoutHeterogeneousGraph,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::WithoutTimeAwareAttention,
        Ablation::WithoutSocialGraph,
        Ablation::WithoutDiffusionGraph,
        Ablation::WithoutHeterogeneousGraph,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::WithoutTimeAwareAttention => "w/o time-aware attention",
            Ablation::WithoutSocialGraph => "w/o social graph",
            Ablation::WithoutDiffusionGraph => "w/o diffusion graph",
            Ablation::WithoutHeterogeneousGraph => "w/o heterogeneous graph",
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Ablation::WithoutTimeAwareAttention => c.selection = Selection::Hard,
            Ablation::WithoutSocialGraph => c.use_social = false,
            Ablation::WithoutDiffusionGraph => c.use_diffusion = false,
            Ablation::WithoutHeterogeneousGraph => c.use_heterograph = false,
        }
        c
    }
}

/// The four ablated variants of `base`, in reporting order.
pub fn ablate(base: &ModelConfig) -> Vec<(Ablation, ModelConfig)> {
    Ablation::ALL.iter().map(|&a| (a, a.apply(base))).collect()
}
