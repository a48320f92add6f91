//! Layered run configuration: profile defaults, then `--config` file values,
//! then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use dyhgcn::graph::{PairMode, SnapshotMode};
use dyhgcn::{Ablation, ModelConfig, Selection, TrainConfig};
use serde::de::{DeserializeOwned, IntoDeserializer};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// d=16, n=4, H=4
    Desk,
    /// d=64, n=8, H=14
    Paper,
}

impl Profile {
    fn model(self) -> ModelConfig {
        match self {
            Profile::Desk => ModelConfig::desk(),
            Profile::Paper => ModelConfig::paper(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationName {
    TimeAttention,
    Social,
    Diffusion,
    Heterograph,
}

impl AblationName {
    fn ablation(self) -> Ablation {
        match self {
            AblationName::TimeAttention => Ablation::WithoutTimeAwareAttention,
            AblationName::Social => Ablation::WithoutSocialGraph,
            AblationName::Diffusion => Ablation::WithoutDiffusionGraph,
            AblationName::Heterograph => Ablation::WithoutHeterogeneousGraph,
        }
    }
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    T::deserialize(s.into_deserializer()).map_err(|e: serde::de::value::Error| e.to_string())
}

/// Every knob of a training run. Unset fields fall back to the file, then
/// to the profile defaults.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Hyperparameter preset
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<Profile>,
    /// Prepared dataset directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Output directory for checkpoint and logs
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intervals: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gcn_layers: Option<usize>,
    /// hard | soft
    #[arg(long, value_parser = parse_enum::<Selection>)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<Selection>,
    /// cumulative | local
    #[arg(long, value_parser = parse_enum::<SnapshotMode>)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_mode: Option<SnapshotMode>,
    /// consecutive | all_prev
    #[arg(long, value_parser = parse_enum::<PairMode>)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair_mode: Option<PairMode>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_social: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_diffusion: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_heterograph: Option<bool>,
    /// Apply a named ablation on top of the model settings
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationName>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Train every epoch and keep the final weights
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keep_last: Option<bool>,
}

macro_rules! layer {
    ($self:ident, $file:ident, $($field:ident),+) => {
        RunConfig { $($field: $self.$field.clone().or($file.$field.clone()),)+ }
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Values set here win over `file`.
    pub fn over(&self, file: &RunConfig) -> RunConfig {
        layer!(
            self, file, profile, data, out, dim, intervals, heads, gcn_layers, selection, snapshot_mode, pair_mode, use_social,
            use_diffusion, use_heterograph, ablation, lr, batch_size, beta1, beta2, eps, epochs, patience, seed, keep_last
        )
    }

    pub fn model_config(&self) -> ModelConfig {
        let base = self.profile.unwrap_or(Profile::Paper).model();
        let config = ModelConfig {
            dim: self.dim.unwrap_or(base.dim),
            intervals: self.intervals.unwrap_or(base.intervals),
            heads: self.heads.unwrap_or(base.heads),
            gcn_layers: self.gcn_layers.unwrap_or(base.gcn_layers),
            selection: self.selection.unwrap_or(base.selection),
            snapshot_mode: self.snapshot_mode.unwrap_or(base.snapshot_mode),
            pair_mode: self.pair_mode.unwrap_or(base.pair_mode),
            use_social: self.use_social.unwrap_or(base.use_social),
            use_diffusion: self.use_diffusion.unwrap_or(base.use_diffusion),
            use_heterograph: self.use_heterograph.unwrap_or(base.use_heterograph),
        };
        match self.ablation {
            Some(a) => a.ablation().apply(&config),
            None => config,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            lr: self.lr.unwrap_or(d.lr),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            eps: self.eps.unwrap_or(d.eps),
            epochs: self.epochs.unwrap_or(d.epochs),
            patience: self.patience.unwrap_or(d.patience),
            seed: self.seed.unwrap_or(d.seed),
            keep_last: self.keep_last.unwrap_or(d.keep_last),
        }
    }

    /// Every field filled in, suitable for writing next to the outputs and
    /// reloading with `--config`.
    pub fn resolved(&self) -> RunConfig {
        let m = self.model_config();
        let t = self.train_config();
        RunConfig {
            profile: None,
            data: self.data.clone(),
            out: self.out.clone(),
            dim: Some(m.dim),
            intervals: Some(m.intervals),
            heads: Some(m.heads),
            gcn_layers: Some(m.gcn_layers),
            selection: Some(m.selection),
            snapshot_mode: Some(m.snapshot_mode),
            pair_mode: Some(m.pair_mode),
            use_social: Some(m.use_social),
            use_diffusion: Some(m.use_diffusion),
            use_heterograph: Some(m.use_heterograph),
            ablation: None,
            lr: Some(t.lr),
            batch_size: Some(t.batch_size),
            beta1: Some(t.beta1),
            beta2: Some(t.beta2),
            eps: Some(t.eps),
            epochs: Some(t.epochs),
            patience: Some(t.patience),
            seed: Some(t.seed),
            keep_last: Some(t.keep_last),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat run config serializes")
    }
}
