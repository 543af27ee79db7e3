//! Translators from external dataset layouts into the canonical corpus.

use serde::Deserialize;
use std::collections::BTreeMap;

use super::{Corpus, CorpusError, Dialogue, Result, Split, Utterance};

#[derive(Deserialize)]
struct MwozDialogue {
    log: Vec<MwozTurn>,
}

#[derive(Deserialize)]
struct MwozTurn {
    text: String,
}

/// MultiWOZ `data.json` layout: a map from dialogue file name to
/// `{"log": [{"text": ...}, ...]}` with turns alternating user, system.
///
/// The layout carries no domain tag, so `domain` is left empty.
pub fn from_multiwoz_json(name: &str, json: &str, split: Split) -> Result<Corpus> {
    let raw: BTreeMap<String, MwozDialogue> =
        serde_json::from_str(json).map_err(|e| CorpusError::Line {
            line: e.line(),
            message: e.to_string(),
        })?;
    let dialogues = raw
        .into_iter()
        .map(|(id, d)| Dialogue {
            id: id.trim_end_matches(".json").to_string(),
            domain: None,
            utterances: d
                .log
                .into_iter()
                .enumerate()
                .map(|(i, t)| {
                    let text = t.text.split_whitespace().collect::<Vec<_>>().join(" ");
                    if i % 2 == 0 {
                        Utterance::user(text)
                    } else {
                        Utterance::system(text)
                    }
                })
                .collect(),
        })
        .collect();
    Corpus::new(name, dialogues, split)
}
