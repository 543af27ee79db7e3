//! Encoder parameter sets and fine-tuned task models, with checkpoint I/O.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::ParamStore;
use crate::corpus::downstream::Ontology;
use crate::encoder::{Checkpoint, EncoderConfig, EncoderError, Provenance, ReferenceEncoder, SequenceEncoder, Vocabulary};
use crate::heads::{HeadError, LinearHead, SlotProjectionBank};
use crate::task::DownstreamTask;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error("checkpoint head metadata: {0}")]
    HeadSpec(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

const ENCODER_PREFIX: &str = "encoder.";

/// A reference encoder together with its parameters.
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub encoder: ReferenceEncoder,
    pub store: ParamStore,
    pub provenance: Provenance,
}

impl EncoderState {
    /// Freshly initialized parameters; stands in for general pre-training.
    pub fn init(config: EncoderConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = ReferenceEncoder::init(config, vocab, &mut store, seed)?;
        Ok(Self {
            encoder,
            store,
            provenance: Provenance {
                seed,
                stage: "init".into(),
                ..Provenance::default()
            },
        })
    }

    /// Loads the encoder part of any checkpoint, dropping head tensors.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let store = ckpt.to_store()?.filtered(|n| n.starts_with(ENCODER_PREFIX));
        let encoder = ReferenceEncoder::attach(ckpt.config.clone(), ckpt.vocabulary.clone(), &store)?;
        Ok(Self {
            encoder,
            store,
            provenance: ckpt.provenance.clone(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(
            self.encoder.config().clone(),
            self.encoder.vocab().clone(),
            &self.store.filtered(|n| n.starts_with(ENCODER_PREFIX)),
            serde_json::Value::Null,
            self.provenance.clone(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }
}

/// Serializable description of a downstream head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum HeadSpec {
    Int {
        labels: Vec<String>,
        oos_label: String,
    },
    Da {
        acts: Vec<String>,
        threshold: f64,
    },
    Rs {
        temperature: f64,
    },
    Dst {
        ontology: Ontology,
    },
}

impl HeadSpec {
    pub fn task(&self) -> DownstreamTask {
        match self {
            HeadSpec::Int { .. } => DownstreamTask::Int,
            HeadSpec::Da { .. } => DownstreamTask::Da,
            HeadSpec::Rs { .. } => DownstreamTask::Rs,
            HeadSpec::Dst { .. } => DownstreamTask::Dst,
        }
    }
}

/// Runtime head bound to parameters in a store.
#[derive(Debug, Clone)]
pub enum TaskHead {
    Int(LinearHead),
    Da(LinearHead),
    Rs,
    Dst(SlotProjectionBank),
}

pub const INT_HEAD: &str = "int";
pub const DA_HEAD: &str = "da";

impl TaskHead {
    /// Creates fresh head parameters in `store`.
    pub fn init(spec: &HeadSpec, store: &mut ParamStore, enc: &ReferenceEncoder, seed: u64) -> Result<Self> {
        let d = enc.hidden_size();
        Ok(match spec {
            HeadSpec::Int { labels, .. } => TaskHead::Int(LinearHead::init(store, INT_HEAD, d, labels.len(), seed)?),
            HeadSpec::Da { acts, .. } => TaskHead::Da(LinearHead::init(store, DA_HEAD, d, acts.len(), seed)?),
            HeadSpec::Rs { .. } => TaskHead::Rs,
            HeadSpec::Dst { ontology } => TaskHead::Dst(SlotProjectionBank::build(store, enc, ontology, seed)?),
        })
    }

    pub fn attach(spec: &HeadSpec, store: &ParamStore, d: usize) -> Result<Self> {
        Ok(match spec {
            HeadSpec::Int { labels, .. } => TaskHead::Int(LinearHead::attach(store, INT_HEAD, d, labels.len())?),
            HeadSpec::Da { acts, .. } => TaskHead::Da(LinearHead::attach(store, DA_HEAD, d, acts.len())?),
            HeadSpec::Rs { .. } => TaskHead::Rs,
            HeadSpec::Dst { ontology } => TaskHead::Dst(SlotProjectionBank::attach(store, ontology, d)?),
        })
    }
}

/// A fine-tuned model for one downstream task.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: ReferenceEncoder,
    pub store: ParamStore,
    pub spec: HeadSpec,
    pub head: TaskHead,
    pub provenance: Provenance,
}

impl Model {
    pub fn task(&self) -> DownstreamTask {
        self.spec.task()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(
            self.encoder.config().clone(),
            self.encoder.vocab().clone(),
            &self.store,
            serde_json::to_value(&self.spec).expect("head spec serializes"),
            self.provenance.clone(),
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let spec: HeadSpec = serde_json::from_value(ckpt.heads.clone()).map_err(|e| ModelError::HeadSpec(e.to_string()))?;
        let store = ckpt.to_store()?;
        let encoder = ReferenceEncoder::attach(ckpt.config.clone(), ckpt.vocabulary.clone(), &store)?;
        let head = TaskHead::attach(&spec, &store, encoder.hidden_size())?;
        Ok(Self {
            encoder,
            store,
            spec,
            head,
            provenance: ckpt.provenance.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> EncoderState {
        let vocab = Vocabulary::build(["north south cheap expensive"], 1, None);
        EncoderState::init(EncoderConfig::tiny(8, 32), vocab, 3).unwrap()
    }

    #[test]
    fn encoder_checkpoint_drops_heads() {
        let mut s = state();
        LinearHead::init(&mut s.store, "pretrain.dsp", 8, 2, 0).unwrap();
        let ckpt = s.to_checkpoint();
        assert!(ckpt.tensors.iter().all(|t| t.name.starts_with("encoder.")));
        let back = EncoderState::from_checkpoint(&ckpt).unwrap();
        assert_eq!(back.store.len(), s.store.len() - 2);
    }

    #[test]
    fn model_round_trip_with_bank() {
        let s = state();
        let ontology: Ontology = [("hotel-area".to_string(), vec!["none".into(), "north".into(), "south".into()])].into();
        let spec = HeadSpec::Dst { ontology };
        let mut store = s.store.clone();
        let head = TaskHead::init(&spec, &mut store, &s.encoder, 1).unwrap();
        let model = Model {
            encoder: s.encoder.clone(),
            store,
            spec,
            head,
            provenance: s.provenance.clone(),
        };
        let back = Model::from_checkpoint(&model.to_checkpoint()).unwrap();
        assert_eq!(back.store, model.store);
        assert_eq!(back.spec, model.spec);
        let values = back.store.id("dst.hotel-area.values").unwrap();
        assert!(back.store.is_frozen(values));
    }
}
