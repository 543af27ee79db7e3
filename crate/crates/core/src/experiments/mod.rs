//! Experiment grids: pre-training configurations × downstream datasets ×
//! seeds, with a checkpoint cache, resumable cells and affinity-annotated
//! reports.

mod affinity;
mod matrix;
mod report;
mod spec;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::encoder::EncoderError;
use crate::model::ModelError;
use crate::trainer::TrainError;

pub use affinity::{affinity_overlap, Ability, AffinityTable, Profile, Structure};
pub use matrix::{
    cell_id, checkpoint_key, run_matrix, CellFailure, CellRecord, MatrixOptions, MatrixOutcome, ENCODER_FILE,
    METRICS_FILE, RUN_FILE, SPEC_FILE,
};
pub use report::{
    emit_report, nice_pairs, render_csv, render_markdown, NicePair, ReportFiles, ResultStore, REPORT_CSV, REPORT_MD,
};
pub use spec::{
    build_vocabulary, CorpusSource, DownstreamSource, EncoderSection, ExperimentSpec, PretrainConfig,
    ReportSettings, SyntheticCorpus, SyntheticDataset, TableSpec,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("experiment spec: {0}")]
    Spec(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl ExperimentError {
    /// Whether the failure comes from input data or the spec rather than
    /// from training.
    pub fn is_data_error(&self) -> bool {
        match self {
            ExperimentError::Train(e) => e.is_data_error(),
            ExperimentError::Corpus(_) | ExperimentError::Json { .. } | ExperimentError::Io { .. } => true,
            ExperimentError::Spec(_) | ExperimentError::UnknownTask(_) => true,
            ExperimentError::Encoder(_) | ExperimentError::Model(_) => false,
        }
    }
}

/// Writes through a temporary sibling and a rename so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub(crate) fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value).expect("record serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
