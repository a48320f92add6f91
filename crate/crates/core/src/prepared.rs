//! On-disk layout of a prepared dataset directory.
//!
//! ```text
//! vocab.tsv                 user<TAB>index
//! train.txt valid.txt test.txt
//! edges.txt                 follower followee (may be empty)
//! meta.toml                 split seed, counts, time normalization range
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{load_cascades_with, load_social_edges, write_cascades, write_social_edges, Cascade, DataError, DatasetSplit, SocialEdge, TimeNormalizer, UnknownUserPolicy, Vocab};
use crate::graph::{DynamicGraph, GraphError};
use crate::model::ModelConfig;

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const EDGES_FILE: &str = "edges.txt";
pub const META_FILE: &str = "meta.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub fn file_name(self) -> &'static str {
        match self {
            SplitName::Train => "train.txt",
            SplitName::Valid => "valid.txt",
            SplitName::Test => "test.txt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitName::Train),
            "valid" => Some(SplitName::Valid),
            "test" => Some(SplitName::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub seed: u64,
    pub num_users: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub social_edges: usize,
    pub time_min: f64,
    pub time_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub vocab: Vocab,
    pub split: DatasetSplit,
    pub edges: Vec<SocialEdge>,
    pub normalizer: TimeNormalizer,
}

impl PreparedData {
    pub fn new(vocab: Vocab, split: DatasetSplit, edges: Vec<SocialEdge>) -> Result<Self, DataError> {
        let normalizer = TimeNormalizer::fit(&split.train)?;
        Ok(Self {
            vocab,
            split,
            edges,
            normalizer,
        })
    }

    pub fn cascades(&self, which: SplitName) -> &[Cascade] {
        match which {
            SplitName::Train => &self.split.train,
            SplitName::Valid => &self.split.valid,
            SplitName::Test => &self.split.test,
        }
    }

    /// Split with timestamps mapped into `[0, 1]` by the training range.
    pub fn normalized(&self, which: SplitName) -> Vec<Cascade> {
        self.normalizer.apply_all(self.cascades(which))
    }

    /// Snapshots built from the normalized training split only.
    pub fn graph(&self, config: &ModelConfig) -> Result<DynamicGraph, GraphError> {
        DynamicGraph::build(&self.normalized(SplitName::Train), &self.edges, self.vocab.len(), &config.graph_options())
    }

    pub fn meta(&self) -> Meta {
        Meta {
            seed: self.split.seed,
            num_users: self.vocab.len(),
            train: self.split.train.len(),
            valid: self.split.valid.len(),
            test: self.split.test.len(),
            social_edges: self.edges.len(),
            time_min: self.normalizer.min,
            time_max: self.normalizer.max,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), DataError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |error| DataError::Io { path, error }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let put = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io(&path))
        };
        put(VOCAB_FILE, self.vocab.to_tsv())?;
        for which in [SplitName::Train, SplitName::Valid, SplitName::Test] {
            put(which.file_name(), write_cascades(self.cascades(which), &self.vocab))?;
        }
        put(EDGES_FILE, write_social_edges(&self.edges, &self.vocab))?;
        put(META_FILE, toml::to_string(&self.meta()).expect("flat meta serializes"))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, DataError> {
        let mut vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        let meta_path = dir.join(META_FILE);
        let meta_text = fs::read_to_string(&meta_path).map_err(|error| DataError::Io {
            path: meta_path.clone(),
            error,
        })?;
        let meta: Meta = toml::from_str(&meta_text).map_err(|e| DataError::File {
            path: meta_path,
            error: Box::new(DataError::InvalidArgument(e.to_string())),
        })?;
        let mut load = |which: SplitName| -> Result<Vec<Cascade>, DataError> {
            Ok(load_cascades_with(&dir.join(which.file_name()), usize::MAX, &mut vocab, UnknownUserPolicy::Error)?.cascades)
        };
        let split = DatasetSplit {
            train: load(SplitName::Train)?,
            valid: load(SplitName::Valid)?,
            test: load(SplitName::Test)?,
            seed: meta.seed,
        };
        let edges = load_social_edges(&dir.join(EDGES_FILE), &mut vocab, UnknownUserPolicy::Error)?.edges;
        Ok(Self {
            vocab,
            split,
            edges,
            normalizer: TimeNormalizer {
                min: meta.time_min,
                max: meta.time_max,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_dataset, SplitRatios, SynthConfig};

    #[test]
    fn write_then_read_roundtrip() {
        let corpus = generate_synthetic(&SynthConfig {
            num_cascades: 30,
            ..SynthConfig::default()
        })
        .unwrap();
        let split = split_dataset(corpus.cascades, SplitRatios::default(), 5).unwrap();
        let prepared = PreparedData::new(corpus.vocab, split, corpus.edges).unwrap();
        let dir = tempfile::tempdir().unwrap();
        prepared.write(dir.path()).unwrap();
        let back = PreparedData::read(dir.path()).unwrap();
        assert_eq!(back, prepared);
        assert!(back.normalized(SplitName::Valid).iter().flat_map(|c| c.events()).all(|e| (0.0..=1.0).contains(&e.time)));
    }
}
