//! Binary checkpoints: magic, length-prefixed JSON header, then parameters
//! and Adam moments as little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use mutraj_core::artifact::write_atomic;

use crate::config::{ModelConfig, TrainConfig};
use crate::optim::Adam;
use crate::train::TrainState;
use crate::transformer::{Model, ModelError};

const MAGIC: &[u8; 8] = b"MTRJCKP1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("truncated checkpoint")]
    Truncated,
    #[error("bad header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Hash of the tokenizer layout the model was trained against.
    pub layout_hash: String,
    pub config_hash: String,
    pub step: u64,
    /// Loss of the last completed step, absent before training.
    pub loss: Option<f64>,
    pub adam_t: u64,
    pub n_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

fn push_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.reserve(xs.len() * 8);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, train: &TrainConfig, layout_hash: &str) -> Self {
        let model = state.model.config().clone();
        Self {
            header: CheckpointHeader {
                config_hash: model.hash(),
                model,
                train: train.clone(),
                layout_hash: layout_hash.to_string(),
                step: state.step,
                loss: state.last_loss.is_finite().then_some(state.last_loss),
                adam_t: state.adam.t,
                n_params: state.model.params().len(),
            },
            params: state.model.params().to_vec(),
            m: state.adam.m.clone(),
            v: state.adam.v.clone(),
        }
    }

    pub fn into_state(self) -> Result<TrainState, CheckpointError> {
        let h = self.header;
        let model = Model::from_params(h.model, self.params)?;
        let adam = Adam { beta1: h.train.beta1, beta2: h.train.beta2, eps: h.train.eps, t: h.adam_t, m: self.m, v: self.v };
        Ok(TrainState { model, adam, step: h.step, last_loss: h.loss.unwrap_or(f64::NAN) })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("serializable");
        let mut out = Vec::with_capacity(16 + header.len() + 24 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        push_f64s(&mut out, &self.params);
        push_f64s(&mut out, &self.m);
        push_f64s(&mut out, &self.v);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 {
            return Err(CheckpointError::Truncated);
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or(CheckpointError::Truncated)?;
        if body.len() < hlen {
            return Err(CheckpointError::Truncated);
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])?;
        let n = header.n_params;
        let data = &body[hlen..];
        if data.len() != 3 * 8 * n {
            return Err(CheckpointError::Truncated);
        }
        let read = |k: usize| -> Vec<f64> {
            data[k * 8 * n..(k + 1) * 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        };
        Ok(Self { params: read(0), m: read(1), v: read(2), header })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(write_atomic(path, &self.to_bytes())?)
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
