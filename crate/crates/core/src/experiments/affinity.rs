//! Which abilities each task trains and which model structure it uses.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::task::{DownstreamTask, PretrainTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ability {
    SingleTurnRepresentation,
    MultiTurnRepresentation,
    Coherence,
    EntityInformation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    SingleTurnClassifier,
    MultiTurnClassifier,
    SiameseModel,
    RankLoss,
}

impl Ability {
    pub const ALL: [Ability; 4] = [
        Ability::SingleTurnRepresentation,
        Ability::MultiTurnRepresentation,
        Ability::Coherence,
        Ability::EntityInformation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ability::SingleTurnRepresentation => "single-turn representation",
            Ability::MultiTurnRepresentation => "multi-turn representation",
            Ability::Coherence => "coherence",
            Ability::EntityInformation => "entity information",
        }
    }
}

impl Structure {
    pub const ALL: [Structure; 4] = [
        Structure::SingleTurnClassifier,
        Structure::MultiTurnClassifier,
        Structure::SiameseModel,
        Structure::RankLoss,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Structure::SingleTurnClassifier => "single-turn classifier",
            Structure::MultiTurnClassifier => "multi-turn classifier",
            Structure::SiameseModel => "siamese model",
            Structure::RankLoss => "rank loss",
        }
    }
}

impl fmt::Display for Ability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Ability and structure marks of one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub abilities: BTreeSet<Ability>,
    pub structures: BTreeSet<Structure>,
}

impl Profile {
    fn new(abilities: &[Ability], structures: &[Structure]) -> Self {
        Self {
            abilities: abilities.iter().copied().collect(),
            structures: structures.iter().copied().collect(),
        }
    }
}

/// The task characterization used to annotate nice pairs. MLM is not part
/// of it.
#[derive(Debug, Clone, Copy, Default)]
pub struct AffinityTable;

impl AffinityTable {
    pub fn downstream(&self, task: DownstreamTask) -> Profile {
        use Ability::*;
        use Structure::*;
        match task {
            DownstreamTask::Int => Profile::new(&[SingleTurnRepresentation, EntityInformation], &[SingleTurnClassifier]),
            DownstreamTask::Da => Profile::new(&[MultiTurnRepresentation], &[MultiTurnClassifier]),
            DownstreamTask::Rs => Profile::new(&[Coherence], &[SiameseModel]),
            DownstreamTask::Dst => Profile::new(&[MultiTurnRepresentation, EntityInformation], &[MultiTurnClassifier]),
        }
    }

    pub fn pretrain(&self, task: PretrainTask) -> Result<Profile, ExperimentError> {
        use Ability::*;
        use Structure::*;
        Ok(match task {
            PretrainTask::Dsp => Profile::new(&[SingleTurnRepresentation], &[SingleTurnClassifier]),
            PretrainTask::Crm => Profile::new(&[Coherence], &[SiameseModel]),
            PretrainTask::Dcv => Profile::new(&[MultiTurnRepresentation], &[MultiTurnClassifier]),
            PretrainTask::Enp => Profile::new(&[SingleTurnRepresentation, EntityInformation], &[SingleTurnClassifier]),
            PretrainTask::Dur => Profile::new(&[Coherence], &[RankLoss]),
            PretrainTask::Mlm => return Err(ExperimentError::UnknownTask(task.to_string())),
        })
    }

    /// Shared abilities and shared structures of a pre-training task and a
    /// downstream task.
    pub fn overlap(&self, p: PretrainTask, d: DownstreamTask) -> Result<(BTreeSet<Ability>, BTreeSet<Structure>), ExperimentError> {
        let a = self.pretrain(p)?;
        let b = self.downstream(d);
        Ok((
            a.abilities.intersection(&b.abilities).copied().collect(),
            a.structures.intersection(&b.structures).copied().collect(),
        ))
    }
}

/// [`AffinityTable::overlap`] by task name. The first name must be a
/// pre-training task other than MLM, the second a downstream task.
pub fn affinity_overlap(p: &str, d: &str) -> Result<(BTreeSet<Ability>, BTreeSet<Structure>), ExperimentError> {
    let p: PretrainTask = p.parse().map_err(|_| ExperimentError::UnknownTask(p.to_string()))?;
    let d: DownstreamTask = d.parse().map_err(|_| ExperimentError::UnknownTask(d.to_string()))?;
    AffinityTable.overlap(p, d)
}
