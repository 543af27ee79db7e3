//! Canonical dialogue data model, JSONL ingestion, splitting and entity
//! annotation.
//!
//! The on-disk format is one dialogue per line:
//!
//! ```json
//! {"id": "d1", "domain": "restaurant", "turns": [{"speaker": "USER", "text": "hi"}]}
//! ```
//!
//! Annotated corpora add `"entity_count"` to every turn.

pub mod adapters;
mod annotate;
pub mod downstream;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use annotate::{annotate_entities, EntityAnnotator, EntitySpan, RuleBasedAnnotator};

use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0} contains no dialogues")]
    Empty(String),
    #[error("dialogue {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("duplicate dialogue id {0}")]
    DuplicateId(String),
    #[error("annotator {annotator} failed on dialogue {id} turn {turn}: {message}")]
    Annotation {
        annotator: String,
        id: String,
        turn: usize,
        message: String,
    },
    #[error("invalid split ratios {0:?}: {1}")]
    Ratios([f64; 3], String),
    #[error("split ratios {ratios:?} leave the {which} split empty for {total} dialogues")]
    EmptySplit {
        ratios: [f64; 3],
        which: Split,
        total: usize,
    },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    /// Binary label used by speaker prediction: USER=0, SYSTEM=1.
    pub fn label(self) -> usize {
        match self {
            Speaker::User => 0,
            Speaker::System => 1,
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::User => "USER",
            Speaker::System => "SYSTEM",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_count: Option<u32>,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Self {
            speaker,
            text: text.into(),
            entity_count: None,
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::new(Speaker::User, text)
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::new(Speaker::System, text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(rename = "turns")]
    pub utterances: Vec<Utterance>,
}

impl Dialogue {
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| CorpusError::Invalid {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(invalid("empty dialogue id".into()));
        }
        if self.utterances.len() < 2 {
            return Err(invalid(format!(
                "needs at least 2 turns, found {}",
                self.utterances.len()
            )));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.text.trim().is_empty() {
                return Err(invalid(format!("turn {i} has empty text")));
            }
        }
        Ok(())
    }

    pub fn is_annotated(&self) -> bool {
        self.utterances.iter().all(|u| u.entity_count.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub dialogues: Vec<Dialogue>,
    pub split: Split,
}

impl Corpus {
    /// Builds a corpus and checks every invariant.
    pub fn new(name: impl Into<String>, dialogues: Vec<Dialogue>, split: Split) -> Result<Self> {
        let corpus = Self {
            name: name.into(),
            dialogues,
            split,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dialogues.is_empty() {
            return Err(CorpusError::Empty(self.name.clone()));
        }
        let mut seen = HashSet::new();
        for d in &self.dialogues {
            d.validate()?;
            if !seen.insert(d.id.as_str()) {
                return Err(CorpusError::DuplicateId(d.id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn utterance_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.utterances.len()).sum()
    }

    pub fn is_annotated(&self) -> bool {
        self.dialogues.iter().all(Dialogue::is_annotated)
    }

    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.dialogues.iter().flat_map(|d| d.utterances.iter())
    }

    /// Serializes to canonical JSONL, one dialogue per line, LF endings.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.dialogues {
            out.push_str(&serde_json::to_string(d).expect("dialogue serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(io)
    }

    /// Stable content hash of the dialogues (hex SHA-256 of the JSONL form).
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }
}

/// Parses canonical JSONL text. Blank lines are ignored; any malformed or
/// invalid record aborts with its 1-based line number.
pub fn parse_corpus(name: &str, text: &str, split: Split) -> Result<Corpus> {
    let mut dialogues = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let d: Dialogue = serde_json::from_str(line).map_err(|e| CorpusError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        d.validate().map_err(|e| CorpusError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(d.id.clone()) {
            return Err(CorpusError::Line {
                line: line_no,
                message: format!("duplicate dialogue id {}", d.id),
            });
        }
        dialogues.push(d);
    }
    if dialogues.is_empty() {
        return Err(CorpusError::Empty(name.to_string()));
    }
    Ok(Corpus {
        name: name.to_string(),
        dialogues,
        split,
    })
}

pub fn load_corpus(path: impl AsRef<Path>, split: Split) -> Result<Corpus> {
    let path = path.as_ref();
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let f = fs::File::open(path).map_err(io)?;
    let mut text = String::new();
    for line in BufReader::new(f).lines() {
        text.push_str(&line.map_err(io)?);
        text.push('\n');
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    parse_corpus(&name, &text, split)
}

/// Default validation-oriented split used by further pre-training.
pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.9, 0.05, 0.05];

/// Shuffles dialogues with `seed` and partitions them by `ratios`
/// (train, valid, test). Sizes use largest-remainder rounding.
pub fn split_corpus(corpus: &Corpus, ratios: [f64; 3], seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(CorpusError::Ratios(ratios, "ratios must be positive".into()));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::Ratios(ratios, format!("ratios sum to {sum}, not 1")));
    }
    let n = corpus.len();
    let sizes = largest_remainder(n, ratios);
    if n >= 3 {
        for (size, which) in sizes.iter().zip([Split::Train, Split::Valid, Split::Test]) {
            if *size == 0 {
                return Err(CorpusError::EmptySplit {
                    ratios,
                    which,
                    total: n,
                });
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, "split_corpus"));
    let mut parts = [Vec::new(), Vec::new(), Vec::new()];
    let mut cursor = 0;
    for (part, size) in parts.iter_mut().zip(sizes) {
        let mut idx = order[cursor..cursor + size].to_vec();
        idx.sort_unstable();
        *part = idx.into_iter().map(|i| corpus.dialogues[i].clone()).collect();
        cursor += size;
    }
    let [train, valid, test] = parts;
    let make = |dialogues, split: Split| Corpus {
        name: format!("{}/{split}", corpus.name),
        dialogues,
        split,
    };
    Ok((
        make(train, Split::Train),
        make(valid, Split::Valid),
        make(test, Split::Test),
    ))
}

fn largest_remainder(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut leftover = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in order {
        if leftover == 0 {
            break;
        }
        sizes[i] += 1;
        leftover -= 1;
    }
    sizes
}

/// Summary statistics of the nine-dataset union used for further
/// pre-training in the reference study. Recorded as metadata only; the
/// datasets themselves are not shipped.
pub mod registry {
    pub struct CorpusStats {
        pub sources: &'static [&'static str],
        pub dialogues: usize,
        pub utterances: usize,
        pub domains: usize,
    }

    pub const PRETRAIN_UNION: CorpusStats = CorpusStats {
        sources: &[
            "Frames",
            "MetaLWOZ",
            "WOZ",
            "CamRest676",
            "MSR-E2E",
            "MWOZ",
            "Schema",
            "SMD",
            "Taskmaster",
        ],
        dialogues: 100_707,
        utterances: 1_388_152,
        domains: 60,
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, turns: &[(&str, &str)]) -> String {
        let turns: Vec<String> = turns
            .iter()
            .map(|(s, t)| format!(r#"{{"speaker":"{s}","text":"{t}"}}"#))
            .collect();
        format!(r#"{{"id":"{id}","domain":null,"turns":[{}]}}"#, turns.join(","))
    }

    fn corpus_of(n: usize) -> Corpus {
        let dialogues = (0..n)
            .map(|i| Dialogue {
                id: format!("d{i}"),
                domain: None,
                utterances: vec![Utterance::user("hi"), Utterance::system("hello")],
            })
            .collect();
        Corpus::new("t", dialogues, Split::Train).unwrap()
    }

    #[test]
    fn parses_two_dialogues() {
        let text = format!(
            "{}\n{}\n",
            line("a", &[("USER", "hi"), ("SYSTEM", "hello")]),
            line("b", &[("USER", "x"), ("SYSTEM", "y"), ("USER", "z")])
        );
        let c = parse_corpus("t", &text, Split::Train).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.utterance_count(), 5);
    }

    #[test]
    fn empty_text_cites_line() {
        let text = format!(
            "{}\n{}\n",
            line("a", &[("USER", "hi"), ("SYSTEM", "hello")]),
            line("b", &[("USER", ""), ("SYSTEM", "y")])
        );
        match parse_corpus("t", &text, Split::Train) {
            Err(CorpusError::Line { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn whitespace_only_text_rejected() {
        let text = line("a", &[("USER", "   "), ("SYSTEM", "hello")]);
        assert!(matches!(
            parse_corpus("t", &text, Split::Train),
            Err(CorpusError::Line { line: 1, .. })
        ));
    }

    #[test]
    fn third_speaker_rejected() {
        let text = line("a", &[("USER", "hi"), ("OPERATOR", "hello")]);
        assert!(parse_corpus("t", &text, Split::Train).is_err());
    }

    #[test]
    fn single_turn_rejected() {
        let text = line("a", &[("USER", "hi")]);
        assert!(parse_corpus("t", &text, Split::Train).is_err());
    }

    #[test]
    fn empty_file_rejected() {
        assert!(matches!(
            parse_corpus("t", "\n\n", Split::Train),
            Err(CorpusError::Empty(_))
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let l = line("a", &[("USER", "hi"), ("SYSTEM", "hello")]);
        let text = format!("{l}\n{l}\n");
        assert!(matches!(
            parse_corpus("t", &text, Split::Train),
            Err(CorpusError::Line { line: 2, .. })
        ));
    }

    #[test]
    fn split_sizes_follow_ratios() {
        let c = corpus_of(10);
        let (a, b, t) = split_corpus(&c, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!((a.len(), b.len(), t.len()), (8, 1, 1));
        let again = split_corpus(&c, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!(a, again.0);
        assert_eq!(b, again.1);
        assert_eq!(t, again.2);
    }

    #[test]
    fn split_rejects_bad_sum() {
        let c = corpus_of(10);
        assert!(matches!(
            split_corpus(&c, [0.5, 0.5, 0.2], 7),
            Err(CorpusError::Ratios(..))
        ));
    }

    #[test]
    fn split_rejects_avoidable_empty_part() {
        let c = corpus_of(10);
        assert!(matches!(
            split_corpus(&c, [0.9, 0.05, 0.05], 1),
            Err(CorpusError::EmptySplit { .. })
        ));
        // Too small to fill all three: allowed.
        let tiny = corpus_of(2);
        assert!(split_corpus(&tiny, [0.9, 0.05, 0.05], 1).is_ok());
    }
}
