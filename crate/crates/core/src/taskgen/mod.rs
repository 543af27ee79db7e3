//! Seeded generators that turn a [`Corpus`] into self-supervised examples.
//!
//! Every generator is a lazy iterator over the corpus. Randomness is keyed
//! by `(seed, generator, dialogue id)`, so a stream replays identically and
//! any single dialogue's examples can be regenerated in isolation.

mod coherence;
mod matching;
mod mlm;
mod reorder;

use std::collections::HashSet;
use std::io::{self, BufRead, Write};

use rand::seq::index;
use rand::Rng as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Dialogue, Utterance};
use crate::seed::Rng;
use crate::task::PretrainTask;

pub use coherence::{gen_dcv, DcvStream};
pub use matching::{gen_crm, CrmStream};
pub use mlm::{gen_mlm, mask_sequence, MlmConfig, MlmStream};
pub use reorder::{gen_dur, reorder_target, DurStream};

#[derive(Debug, Error)]
pub enum TaskGenError {
    #[error("{0}: corpus is empty")]
    EmptyCorpus(PretrainTask),
    #[error("{0}: needs at least 2 dialogues to draw from other dialogues")]
    SingleDialogue(PretrainTask),
    #[error("{task}: invalid {name}: {message}")]
    Param {
        task: PretrainTask,
        name: &'static str,
        message: String,
    },
    #[error("ENP: corpus {0} has no entity counts; run annotate_entities first")]
    Unannotated(String),
}

pub type Result<T> = std::result::Result<T, TaskGenError>;

pub(crate) fn param_err(task: PretrainTask, name: &'static str, message: impl Into<String>) -> TaskGenError {
    TaskGenError::Param {
        task,
        name,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub dialogue_id: String,
    /// Input ids after substitution.
    pub tokens: Vec<u32>,
    pub masked_positions: Vec<usize>,
    pub original_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerExample {
    pub dialogue_id: String,
    pub turn: usize,
    pub utterance: Utterance,
    /// USER=0, SYSTEM=1.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchExample {
    pub dialogue_id: String,
    pub turn: usize,
    pub context: Vec<Utterance>,
    pub gold_response: Utterance,
    pub negatives: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoherenceExample {
    pub dialogue: Dialogue,
    /// 1 = coherent, 0 = corrupted.
    pub label: usize,
    pub replaced_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCountExample {
    pub dialogue_id: String,
    pub turn: usize,
    pub utterance: Utterance,
    pub count_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReorderExample {
    pub dialogue: Dialogue,
    pub window_start: usize,
    /// `permutation[i]` is the original window offset of the utterance now
    /// at window slot `i`.
    pub permutation: Vec<usize>,
    pub target_distribution: Vec<f64>,
}

/// Any pre-training example, tagged by task in serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum PretrainExample {
    Mlm(MaskedExample),
    Dsp(SpeakerExample),
    Crm(MatchExample),
    Dcv(CoherenceExample),
    Enp(EntityCountExample),
    Dur(ReorderExample),
}

impl PretrainExample {
    pub fn task(&self) -> PretrainTask {
        match self {
            PretrainExample::Mlm(_) => PretrainTask::Mlm,
            PretrainExample::Dsp(_) => PretrainTask::Dsp,
            PretrainExample::Crm(_) => PretrainTask::Crm,
            PretrainExample::Dcv(_) => PretrainTask::Dcv,
            PretrainExample::Enp(_) => PretrainTask::Enp,
            PretrainExample::Dur(_) => PretrainTask::Dur,
        }
    }
}

/// One speaker example per utterance.
pub fn gen_dsp(corpus: &Corpus) -> Result<impl Iterator<Item = SpeakerExample> + '_> {
    if corpus.is_empty() {
        return Err(TaskGenError::EmptyCorpus(PretrainTask::Dsp));
    }
    Ok(corpus.dialogues.iter().flat_map(|d| {
        d.utterances.iter().enumerate().map(|(turn, u)| SpeakerExample {
            dialogue_id: d.id.clone(),
            turn,
            utterance: u.clone(),
            label: u.speaker.label(),
        })
    }))
}

/// One entity-count example per utterance, counts clamped to `c_max`.
pub fn gen_enp(corpus: &Corpus, c_max: usize) -> Result<impl Iterator<Item = EntityCountExample> + '_> {
    if corpus.is_empty() {
        return Err(TaskGenError::EmptyCorpus(PretrainTask::Enp));
    }
    if c_max < 1 {
        return Err(param_err(PretrainTask::Enp, "c_max", "must be at least 1"));
    }
    if !corpus.is_annotated() {
        return Err(TaskGenError::Unannotated(corpus.name.clone()));
    }
    Ok(corpus.dialogues.iter().flat_map(move |d| {
        d.utterances.iter().enumerate().map(move |(turn, u)| EntityCountExample {
            dialogue_id: d.id.clone(),
            turn,
            utterance: u.clone(),
            count_class: (u.entity_count.expect("checked annotated") as usize).min(c_max),
        })
    }))
}

/// Draws `k` distinct indices from `0..n` that satisfy `accept`, uniformly
/// among acceptable indices. `None` if fewer than `k` qualify.
pub(crate) fn sample_accepted(
    rng: &mut Rng,
    n: usize,
    k: usize,
    accept: impl Fn(usize) -> bool,
) -> Option<Vec<usize>> {
    if k == 0 {
        return Some(Vec::new());
    }
    if n == 0 {
        return None;
    }
    // Rejection sampling is cheap when most of the pool is acceptable; fall
    // back to an exhaustive filter when it keeps missing.
    let mut chosen = Vec::with_capacity(k);
    let mut seen = HashSet::with_capacity(k);
    let mut attempts = 0;
    while chosen.len() < k && attempts < 32 * k {
        attempts += 1;
        let i = rng.gen_range(0..n);
        if accept(i) && seen.insert(i) {
            chosen.push(i);
        }
    }
    if chosen.len() == k {
        return Some(chosen);
    }
    let eligible: Vec<usize> = (0..n).filter(|&i| accept(i)).collect();
    if eligible.len() < k {
        return None;
    }
    Some(
        index::sample(rng, eligible.len(), k)
            .into_iter()
            .map(|j| eligible[j])
            .collect(),
    )
}

/// Writes one JSON object per line; returns the number written.
pub fn write_jsonl<T: Serialize>(examples: impl IntoIterator<Item = T>, mut out: impl Write) -> io::Result<usize> {
    let mut n = 0;
    for ex in examples {
        serde_json::to_writer(&mut out, &ex)?;
        out.write_all(b"\n")?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

/// Reads examples written by [`write_jsonl`].
pub fn read_jsonl<T: DeserializeOwned>(input: impl BufRead) -> io::Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::seed::rng_for;

    fn corpus(annotated: bool) -> Corpus {
        let mut u = vec![
            Utterance::user("hi"),
            Utterance::system("hello"),
            Utterance::user("book it"),
            Utterance::system("done"),
        ];
        if annotated {
            for (i, x) in u.iter_mut().enumerate() {
                x.entity_count = Some([0, 14, 3, 10][i]);
            }
        }
        let d = Dialogue {
            id: "d1".into(),
            domain: None,
            utterances: u,
        };
        Corpus::new("t", vec![d], Split::Train).unwrap()
    }

    #[test]
    fn dsp_labels_mirror_speakers() {
        let c = corpus(false);
        let labels: Vec<usize> = gen_dsp(&c).unwrap().map(|e| e.label).collect();
        assert_eq!(labels, [0, 1, 0, 1]);
    }

    #[test]
    fn enp_clamps_and_requires_annotation() {
        assert!(matches!(gen_enp(&corpus(false), 10), Err(TaskGenError::Unannotated(_))));
        let c = corpus(true);
        let classes: Vec<usize> = gen_enp(&c, 10).unwrap().map(|e| e.count_class).collect();
        assert_eq!(classes, [0, 10, 3, 10]);
    }

    #[test]
    fn sample_accepted_respects_filter() {
        let mut rng = rng_for(1, "t");
        let got = sample_accepted(&mut rng, 50, 5, |i| i % 7 == 0).unwrap();
        assert_eq!(got.len(), 5);
        assert!(got.iter().all(|i| i % 7 == 0));
        let set: HashSet<_> = got.iter().collect();
        assert_eq!(set.len(), 5);
        assert!(sample_accepted(&mut rng, 10, 3, |i| i == 0).is_none());
    }

    #[test]
    fn jsonl_round_trip() {
        let c = corpus(true);
        let exs: Vec<PretrainExample> = gen_enp(&c, 10).unwrap().map(PretrainExample::Enp).collect();
        let mut buf = Vec::new();
        assert_eq!(write_jsonl(&exs, &mut buf).unwrap(), 4);
        let back: Vec<PretrainExample> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, exs);
        assert!(String::from_utf8(buf).unwrap().starts_with("{\"task\":\"enp\""));
    }
}
