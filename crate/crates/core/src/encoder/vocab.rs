use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::corpus::Speaker;

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const USR: &str = "[USR]";
pub const SYS: &str = "[SYS]";
pub const UNK: &str = "[UNK]";

/// Reserved tokens, in id order.
pub const RESERVED: [&str; 7] = [PAD, CLS, SEP, MASK, USR, SYS, UNK];

/// Lowercased whitespace tokenization used by the reference path.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Token ↔ id map with dense ids. Ids 0..7 are the reserved markers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const PAD_ID: u32 = 0;
    pub const CLS_ID: u32 = 1;
    pub const SEP_ID: u32 = 2;
    pub const MASK_ID: u32 = 3;
    pub const USR_ID: u32 = 4;
    pub const SYS_ID: u32 = 5;
    pub const UNK_ID: u32 = 6;

    /// Builds a vocabulary from raw texts: reserved tokens first, then words
    /// with count ≥ `min_count` by descending frequency, ties alphabetical.
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        min_count: usize,
        max_size: Option<usize>,
    ) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && !RESERVED.contains(&w.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let budget = max_size.map_or(usize::MAX, |m| m.saturating_sub(RESERVED.len()));
        tokens.extend(ranked.into_iter().take(budget).map(|(w, _)| w));
        Self::from_tokens(tokens).expect("reserved prefix present")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, EncoderError> {
        if tokens.len() < RESERVED.len()
            || tokens.iter().zip(RESERVED).any(|(t, r)| t != r)
        {
            return Err(EncoderError::Vocabulary(format!(
                "vocabulary must start with {RESERVED:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(EncoderError::Vocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a (lowercased) word, `[UNK]` when absent.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < RESERVED.len()
    }

    pub fn marker(speaker: Speaker) -> u32 {
        match speaker {
            Speaker::User => Self::USR_ID,
            Speaker::System => Self::SYS_ID,
        }
    }

    /// Ids of ordinary (non-reserved) tokens.
    pub fn regular_ids(&self) -> std::ops::Range<u32> {
        RESERVED.len() as u32..self.tokens.len() as u32
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = EncoderError;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}
