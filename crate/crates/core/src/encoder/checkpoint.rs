//! Self-describing checkpoint files.
//!
//! Tensors are stored as base64 of their little-endian `f64` bytes so a
//! save/load cycle reproduces every value bit for bit.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderError, Result, Vocabulary};
use crate::autograd::ParamStore;
use crate::task::{DownstreamTask, PretrainTask};
use crate::tensor::Matrix;

pub const FORMAT: &str = "todpt-checkpoint/1";

/// How a parameter set came to be.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Further pre-training objectives, excluding MLM.
    pub pretrain_tasks: Vec<PretrainTask>,
    /// Whether MLM was part of further pre-training.
    pub mlm: bool,
    pub seed: u64,
    /// Optimizer steps taken in the stage that wrote this checkpoint.
    pub steps: usize,
    /// `"init"`, `"pretrain"` or `"finetune"`.
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune_task: Option<DownstreamTask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub frozen: bool,
    pub data: String,
}

impl TensorRecord {
    fn encode(name: &str, m: &Matrix, frozen: bool) -> Self {
        let bytes: Vec<u8> = m.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
            frozen,
            data: STANDARD.encode(bytes),
        }
    }

    fn decode(&self) -> std::result::Result<Matrix, String> {
        let bytes = STANDARD.decode(&self.data).map_err(|e| e.to_string())?;
        if bytes.len() != self.rows * self.cols * 8 {
            return Err(format!(
                "tensor {} holds {} bytes, expected {}",
                self.name,
                bytes.len(),
                self.rows * self.cols * 8
            ));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Matrix::from_vec(self.rows, self.cols, data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: EncoderConfig,
    pub vocabulary: Vocabulary,
    pub tensors: Vec<TensorRecord>,
    /// Head layout (label inventories, kinds); opaque to the encoder.
    #[serde(default)]
    pub heads: serde_json::Value,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn from_store(
        config: EncoderConfig,
        vocabulary: Vocabulary,
        store: &ParamStore,
        heads: serde_json::Value,
        provenance: Provenance,
    ) -> Self {
        let tensors = store
            .iter()
            .map(|(_, e)| TensorRecord::encode(&e.name, &e.value, e.frozen))
            .collect();
        Self {
            format: FORMAT.to_string(),
            config,
            vocabulary,
            tensors,
            heads,
            provenance,
        }
    }

    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for t in &self.tensors {
            let m = t.decode().map_err(|message| EncoderError::Checkpoint {
                path: String::new(),
                message,
            })?;
            if t.frozen {
                store.insert_frozen(t.name.clone(), m);
            } else {
                store.insert(t.name.clone(), m);
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let err = |message: String| EncoderError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
        }
        let json = serde_json::to_string(self).map_err(|e| err(e.to_string()))?;
        // Write then rename so readers never observe a partial file.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, json).map_err(|e| err(e.to_string()))?;
        fs::rename(&tmp, path).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let err = |message: String| EncoderError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if ckpt.format != FORMAT {
            return Err(err(format!("unsupported format {:?}", ckpt.format)));
        }
        Ok(ckpt)
    }
}
