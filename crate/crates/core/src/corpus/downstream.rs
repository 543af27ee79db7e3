//! Supervised fixture formats for the four downstream tasks.
//!
//! Each split is a JSONL file with one record per line:
//!
//! | task | fields |
//! |------|--------|
//! | INT  | `text`, `intent` |
//! | DA   | `id`, `turns`, `acts` (acts of the next system turn) |
//! | RS   | `id`, `context`, `response`, optional `negatives` |
//! | DST  | `id`, `turns`, `state` (`"domain-slot"` → value) |
//!
//! DST additionally needs an ontology file: a JSON object mapping every
//! `"domain-slot"` to its candidate values.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Result, Utterance};
use crate::task::DownstreamTask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentRecord {
    pub text: String,
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActRecord {
    pub id: String,
    pub turns: Vec<Utterance>,
    pub acts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub id: String,
    pub context: Vec<Utterance>,
    pub response: String,
    /// Fixed evaluation candidates; sampled from the split when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub negatives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub id: String,
    pub turns: Vec<Utterance>,
    pub state: BTreeMap<String, String>,
}

/// `"domain-slot"` → candidate values, in key order.
pub type Ontology = BTreeMap<String, Vec<String>>;

/// Records of one split of one downstream dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum DownstreamRecords {
    Int(Vec<IntentRecord>),
    Da(Vec<ActRecord>),
    Rs(Vec<ResponseRecord>),
    Dst(Vec<StateRecord>),
}

impl DownstreamRecords {
    pub fn task(&self) -> DownstreamTask {
        match self {
            DownstreamRecords::Int(_) => DownstreamTask::Int,
            DownstreamRecords::Da(_) => DownstreamTask::Da,
            DownstreamRecords::Rs(_) => DownstreamTask::Rs,
            DownstreamRecords::Dst(_) => DownstreamTask::Dst,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            DownstreamRecords::Int(v) => v.len(),
            DownstreamRecords::Da(v) => v.len(),
            DownstreamRecords::Rs(v) => v.len(),
            DownstreamRecords::Dst(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_jsonl(&self) -> String {
        fn lines<T: Serialize>(v: &[T]) -> String {
            v.iter()
                .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
                .collect()
        }
        match self {
            DownstreamRecords::Int(v) => lines(v),
            DownstreamRecords::Da(v) => lines(v),
            DownstreamRecords::Rs(v) => lines(v),
            DownstreamRecords::Dst(v) => lines(v),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    fn validate(&self) -> std::result::Result<(), (usize, String)> {
        let check_turns = |turns: &[Utterance]| -> std::result::Result<(), String> {
            if turns.is_empty() {
                return Err("record has no turns".into());
            }
            if let Some(i) = turns.iter().position(|u| u.text.trim().is_empty()) {
                return Err(format!("turn {i} has empty text"));
            }
            Ok(())
        };
        let errs: Vec<(usize, String)> = match self {
            DownstreamRecords::Int(v) => v
                .iter()
                .enumerate()
                .filter(|(_, r)| r.text.trim().is_empty() || r.intent.is_empty())
                .map(|(i, _)| (i, "empty text or intent".to_string()))
                .collect(),
            DownstreamRecords::Da(v) => v
                .iter()
                .enumerate()
                .filter_map(|(i, r)| check_turns(&r.turns).err().map(|e| (i, e)))
                .collect(),
            DownstreamRecords::Rs(v) => v
                .iter()
                .enumerate()
                .filter_map(|(i, r)| {
                    check_turns(&r.context)
                        .err()
                        .or_else(|| r.response.trim().is_empty().then(|| "empty response".into()))
                        .map(|e| (i, e))
                })
                .collect(),
            DownstreamRecords::Dst(v) => v
                .iter()
                .enumerate()
                .filter_map(|(i, r)| check_turns(&r.turns).err().map(|e| (i, e)))
                .collect(),
        };
        match errs.into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| CorpusError::Line {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Parses one split of a downstream dataset. Missing fields are reported
/// by name together with the line number.
pub fn parse_downstream(task: DownstreamTask, text: &str) -> Result<DownstreamRecords> {
    let records = match task {
        DownstreamTask::Int => DownstreamRecords::Int(parse_jsonl(text)?),
        DownstreamTask::Da => DownstreamRecords::Da(parse_jsonl(text)?),
        DownstreamTask::Rs => DownstreamRecords::Rs(parse_jsonl(text)?),
        DownstreamTask::Dst => DownstreamRecords::Dst(parse_jsonl(text)?),
    };
    if records.is_empty() {
        return Err(CorpusError::Empty(format!("{task} data")));
    }
    // Line numbers equal record index + 1 only without blank lines, so the
    // message names the record index instead.
    records.validate().map_err(|(i, message)| CorpusError::Invalid {
        id: format!("record {i}"),
        message,
    })?;
    Ok(records)
}

pub fn load_downstream(task: DownstreamTask, path: impl AsRef<Path>) -> Result<DownstreamRecords> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_downstream(task, &text)
}

pub fn load_ontology(path: impl AsRef<Path>) -> Result<Ontology> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CorpusError::Line {
        line: e.line(),
        message: e.to_string(),
    })
}

/// Sorted union of intent labels across splits.
pub fn intent_inventory<'a>(splits: impl IntoIterator<Item = &'a [IntentRecord]>) -> Vec<String> {
    let set: BTreeSet<&str> = splits
        .into_iter()
        .flatten()
        .map(|r| r.intent.as_str())
        .collect();
    set.into_iter().map(str::to_string).collect()
}

/// Sorted union of dialogue acts across splits.
pub fn act_inventory<'a>(splits: impl IntoIterator<Item = &'a [ActRecord]>) -> Vec<String> {
    let set: BTreeSet<&str> = splits
        .into_iter()
        .flatten()
        .flat_map(|r| r.acts.iter().map(String::as_str))
        .collect();
    set.into_iter().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_field_is_named() {
        let err = parse_downstream(DownstreamTask::Int, r#"{"text": "hi"}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("intent"), "{msg}");
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn parses_each_task() {
        let int = parse_downstream(DownstreamTask::Int, r#"{"text":"hi","intent":"greet"}"#);
        assert_eq!(int.unwrap().len(), 1);
        let da = r#"{"id":"a","turns":[{"speaker":"USER","text":"hi"}],"acts":["greet"]}"#;
        assert_eq!(parse_downstream(DownstreamTask::Da, da).unwrap().task(), DownstreamTask::Da);
        let rs = r#"{"id":"a","context":[{"speaker":"USER","text":"hi"}],"response":"hello"}"#;
        assert!(parse_downstream(DownstreamTask::Rs, rs).is_ok());
        let dst = r#"{"id":"a","turns":[{"speaker":"USER","text":"hi"}],"state":{"hotel-area":"north"}}"#;
        assert!(parse_downstream(DownstreamTask::Dst, dst).is_ok());
    }

    #[test]
    fn rejects_empty_turns() {
        let da = r#"{"id":"a","turns":[],"acts":[]}"#;
        assert!(parse_downstream(DownstreamTask::Da, da).is_err());
    }

    #[test]
    fn inventories_are_sorted_unions() {
        let a = vec![ActRecord {
            id: "x".into(),
            turns: vec![Utterance::user("hi")],
            acts: vec!["request".into(), "greet".into()],
        }];
        let b = vec![ActRecord {
            id: "y".into(),
            turns: vec![Utterance::user("hi")],
            acts: vec!["bye".into()],
        }];
        assert_eq!(act_inventory([a.as_slice(), b.as_slice()]), ["bye", "greet", "request"]);
    }
}
