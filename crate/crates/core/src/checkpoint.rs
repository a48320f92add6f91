//! Binary checkpoints of model parameters and optimizer state.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic     8 bytes  "DYHGCNCK"
//! version   u32      = 1
//! config    u32 length + UTF-8 TOML model config
//! users     u64
//! params    u32 count, then per tensor:
//!             u32 name length + UTF-8 name, u32 rank, u64 dims[rank], f64 data
//! adam      u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps,
//!           then f64 first moments and f64 second moments per tensor
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::{AdamConfig, AdamState, ParamStore, Tensor};
use crate::model::{DyHgcn, ModelConfig, ModelError};

pub const MAGIC: &[u8; 8] = b"DYHGCNCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match vocabulary: {0}")]
    VocabMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub num_users: usize,
    pub params: ParamStore,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn new(model: &DyHgcn, adam: &AdamState) -> Self {
        Self {
            config: model.config().clone(),
            num_users: model.num_users(),
            params: model.params().clone(),
            adam: adam.clone(),
        }
    }

    pub fn model(&self) -> Result<DyHgcn, CheckpointError> {
        Ok(DyHgcn::from_params(self.config.clone(), self.num_users, self.params.clone())?)
    }

    /// Fails with the differing shapes when the vocabulary size changed.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<(), CheckpointError> {
        if vocab_size == self.num_users {
            return Ok(());
        }
        let d = self.config.dim;
        Err(CheckpointError::VocabMismatch(format!(
            "user_embedding is [{}, {d}] but the vocabulary needs [{vocab_size}, {d}]; out.w3 is [{}, {d}] vs [{vocab_size}, {d}]; out.b2 is [{}] vs [{vocab_size}]",
            self.num_users, self.num_users, self.num_users
        )))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config = self.config.to_toml();
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(self.num_users as u64).to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_floats(&mut out, t.data());
        }
        let a = &self.adam;
        out.extend_from_slice(&a.step.to_le_bytes());
        put_floats(&mut out, &[a.config.lr, a.config.beta1, a.config.beta2, a.config.eps]);
        for t in a.m.iter().chain(&a.v) {
            put_floats(&mut out, t.data());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let config_len = r.u32()? as usize;
        let config_text = std::str::from_utf8(r.take(config_len)?).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let config = ModelConfig::from_toml(config_text).map_err(CheckpointError::Corrupt)?;
        let num_users = r.u64()? as usize;

        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = r.floats(n)?;
            let tensor = Tensor::new(&shape, data).map_err(|e| CheckpointError::Corrupt(format!("{name}: {e}")))?;
            if params.id_of(&name).is_some() {
                return Err(CheckpointError::Corrupt(format!("duplicate tensor {name}")));
            }
            params.insert(name, tensor);
        }

        let step = r.u64()?;
        let hyper = r.floats(4)?;
        let config_adam = AdamConfig {
            lr: hyper[0],
            beta1: hyper[1],
            beta2: hyper[2],
            eps: hyper[3],
        };
        let mut moments = Vec::with_capacity(2 * params.len());
        for _ in 0..2 {
            for (_, _, t) in params.iter() {
                moments.push(Tensor::new(t.shape(), r.floats(t.len())?).expect("shape from parameter"));
            }
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let v = moments.split_off(params.len());
        let checkpoint = Self {
            config,
            num_users,
            params,
            adam: AdamState {
                config: config_adam,
                step,
                m: moments,
                v,
            },
        };
        checkpoint.model()?;
        Ok(checkpoint)
    }

    /// Text manifest: one `name shape` line per tensor.
    pub fn manifest(&self) -> String {
        let mut out = format!("version {VERSION}\nnum_users {}\nadam_step {}\n", self.num_users, self.adam.step);
        for (_, name, t) in self.params.iter() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{name} {}", dims.join("x"));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_floats(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let slice = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
