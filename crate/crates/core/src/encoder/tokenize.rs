use serde::{Deserialize, Serialize};

use super::vocab::{words, Vocabulary};
use super::EncoderError;
use crate::corpus::{Speaker, Utterance};

/// Position of a role marker in a flattened dialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub role: Speaker,
    pub position: usize,
    /// Index of the turn in the original (untruncated) dialogue.
    pub turn: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Role markers in dialogue order; empty for single utterances.
    pub markers: Vec<Marker>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions of one role's markers.
    pub fn marker_positions(&self, role: Speaker) -> Vec<usize> {
        self.markers
            .iter()
            .filter(|m| m.role == role)
            .map(|m| m.position)
            .collect()
    }

    /// Index of the earliest turn that survived truncation.
    pub fn first_turn(&self) -> Option<usize> {
        self.markers.first().map(|m| m.turn)
    }
}

/// `[CLS] tokens [SEP]`, truncating the tokens to fit `max_len`.
pub fn tokenize_text(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    let budget = max_len.max(2) - 2;
    let mut ids = Vec::with_capacity(budget + 2);
    ids.push(Vocabulary::CLS_ID);
    ids.extend(words(text).take(budget).map(|w| vocab.id(&w)));
    ids.push(Vocabulary::SEP_ID);
    TokenSequence {
        ids,
        markers: Vec::new(),
    }
}

pub fn tokenize_utterance(u: &Utterance, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    tokenize_text(&u.text, vocab, max_len)
}

/// `[CLS] ([USR]|[SYS] tokens)* [SEP]`.
///
/// When the dialogue does not fit, the oldest turns are dropped first. If
/// the most recent turn alone is too long its tail is cut.
pub fn tokenize_dialogue(
    turns: &[Utterance],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSequence, EncoderError> {
    if turns.is_empty() || max_len < 4 {
        return Err(EncoderError::Truncated {
            max_len,
            turns: turns.len(),
        });
    }
    let encoded: Vec<Vec<u32>> = turns
        .iter()
        .map(|u| words(&u.text).map(|w| vocab.id(&w)).collect())
        .collect();

    // Keep the longest suffix of turns that fits alongside [CLS] and [SEP].
    let mut used = 2;
    let mut first = turns.len();
    while first > 0 {
        let cost = 1 + encoded[first - 1].len();
        if used + cost > max_len {
            break;
        }
        used += cost;
        first -= 1;
    }

    let mut ids = vec![Vocabulary::CLS_ID];
    let mut markers = Vec::new();
    if first == turns.len() {
        // Even the final turn is too long: keep its head.
        let last = turns.len() - 1;
        markers.push(Marker {
            role: turns[last].speaker,
            position: 1,
            turn: last,
        });
        ids.push(Vocabulary::marker(turns[last].speaker));
        ids.extend(encoded[last].iter().take(max_len - 3));
    } else {
        for (turn, (u, toks)) in turns.iter().zip(&encoded).enumerate().skip(first) {
            markers.push(Marker {
                role: u.speaker,
                position: ids.len(),
                turn,
            });
            ids.push(Vocabulary::marker(u.speaker));
            ids.extend(toks);
        }
    }
    ids.push(Vocabulary::SEP_ID);
    Ok(TokenSequence { ids, markers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::build(["hello there how are you fine thanks"], 1, None)
    }

    #[test]
    fn utterance_wrapping() {
        let v = vocab();
        let s = tokenize_utterance(&Utterance::user("Hello there"), &v, 512);
        let toks: Vec<&str> = s.ids.iter().map(|&i| v.token(i)).collect();
        assert_eq!(toks, ["[CLS]", "hello", "there", "[SEP]"]);
    }

    #[test]
    fn long_utterance_truncates_to_max_len() {
        let v = vocab();
        let text = vec!["hello"; 600].join(" ");
        let s = tokenize_utterance(&Utterance::user(text), &v, 512);
        assert_eq!(s.len(), 512);
        assert_eq!(s.ids[0], Vocabulary::CLS_ID);
        assert_eq!(s.ids[511], Vocabulary::SEP_ID);
    }

    #[test]
    fn dialogue_markers() {
        let v = vocab();
        let turns = [Utterance::user("hello"), Utterance::system("how are you")];
        let s = tokenize_dialogue(&turns, &v, 512).unwrap();
        assert_eq!(s.marker_positions(Speaker::User), vec![1]);
        assert_eq!(s.marker_positions(Speaker::System), vec![3]);
        assert_eq!(s.markers.len(), turns.len());
        assert_eq!(s.len(), 1 + 2 + 4 + 1);
    }

    #[test]
    fn truncation_drops_oldest_turns() {
        let v = vocab();
        let turns = [
            Utterance::user("hello there how are you"),
            Utterance::system("fine thanks"),
            Utterance::user("how are you"),
            Utterance::system("fine"),
        ];
        // [CLS] + (1+3) + (1+1) + [SEP] = 8
        let s = tokenize_dialogue(&turns, &v, 8).unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s.first_turn(), Some(2));
        assert_eq!(s.markers.last().unwrap().turn, 3);
        assert_eq!(s.ids[s.len() - 2], v.id("fine"));
    }

    #[test]
    fn oversized_final_turn_keeps_its_head() {
        let v = vocab();
        let turns = [Utterance::user("hi"), Utterance::system("hello there how are you")];
        let s = tokenize_dialogue(&turns, &v, 5).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.markers.len(), 1);
        assert_eq!(s.markers[0].turn, 1);
    }

    #[test]
    fn zero_turns_is_an_error() {
        let v = vocab();
        assert!(tokenize_dialogue(&[], &v, 512).is_err());
        assert!(tokenize_dialogue(&[Utterance::user("hi")], &v, 3).is_err());
    }
}
