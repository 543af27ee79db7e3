//! Task identifiers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Objectives available during further pre-training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainTask {
    /// Masked language modelling.
    Mlm,
    /// Dialogue speaker prediction.
    Dsp,
    /// Context-response matching.
    Crm,
    /// Dialogue coherence verification.
    Dcv,
    /// Entity number prediction.
    Enp,
    /// Dialogue utterance reordering.
    Dur,
}

impl PretrainTask {
    pub const ALL: [PretrainTask; 6] = [
        PretrainTask::Mlm,
        PretrainTask::Dsp,
        PretrainTask::Crm,
        PretrainTask::Dcv,
        PretrainTask::Enp,
        PretrainTask::Dur,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PretrainTask::Mlm => "MLM",
            PretrainTask::Dsp => "DSP",
            PretrainTask::Crm => "CRM",
            PretrainTask::Dcv => "DCV",
            PretrainTask::Enp => "ENP",
            PretrainTask::Dur => "DUR",
        }
    }
}

/// Supervised fine-tuning tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DownstreamTask {
    /// Intent recognition.
    Int,
    /// Dialogue act prediction.
    Da,
    /// Response selection.
    Rs,
    /// Dialogue state tracking.
    Dst,
}

impl DownstreamTask {
    pub const ALL: [DownstreamTask; 4] = [
        DownstreamTask::Int,
        DownstreamTask::Da,
        DownstreamTask::Rs,
        DownstreamTask::Dst,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DownstreamTask::Int => "INT",
            DownstreamTask::Da => "DA",
            DownstreamTask::Rs => "RS",
            DownstreamTask::Dst => "DST",
        }
    }
}

impl fmt::Display for PretrainTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for DownstreamTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownTask(pub String);

impl fmt::Display for UnknownTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown task id {:?}", self.0)
    }
}

impl std::error::Error for UnknownTask {}

impl FromStr for PretrainTask {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PretrainTask::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownTask(s.to_string()))
    }
}

impl FromStr for DownstreamTask {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DownstreamTask::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownTask(s.to_string()))
    }
}
