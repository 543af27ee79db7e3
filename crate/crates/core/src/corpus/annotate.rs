use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Result};

/// Byte range of an entity mention inside an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
}

/// Anything that finds entity mentions in text.
///
/// Implementations must be deterministic and return non-overlapping spans
/// inside the text.
pub trait EntityAnnotator: Send + Sync {
    fn name(&self) -> &str;

    fn annotate(&self, text: &str) -> std::result::Result<Vec<EntitySpan>, String>;
}

/// Dependency-free fallback annotator.
///
/// An entity is either a maximal run of capitalized tokens or a standalone
/// digit token. A run consisting of a single sentence-initial stopword
/// ("The", "Please", "Hello", ...) is not an entity. Punctuation attached to
/// a token is ignored for matching and ends a run when it trails the token.
#[derive(Debug, Clone, Default)]
pub struct RuleBasedAnnotator;

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "i", "i'd", "i'm", "i'll", "it", "it's", "is", "are", "yes", "no", "ok",
    "okay", "sure", "please", "hello", "hi", "hey", "thanks", "thank", "what", "where", "when",
    "which", "who", "how", "can", "could", "would", "will", "do", "does", "did", "there", "that",
    "this", "we", "you", "your", "my", "great", "good", "perfect", "alright", "how's", "let",
    "let's", "and", "but", "so", "also", "then", "just", "unfortunately", "sorry", "may",
    "should", "have", "any", "in", "on", "at", "for", "goodbye", "bye", "welcome",
];

struct Token<'a> {
    core: &'a str,
    start: usize,
    end: usize,
    /// Trailing punctuation that closes a capitalized run.
    breaks_after: bool,
    /// Token ends a sentence.
    ends_sentence: bool,
}

fn tokens(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for raw in text.split_whitespace() {
        let start_raw = offset + text[offset..].find(raw).expect("token present");
        offset = start_raw + raw.len();
        let lead = raw.len() - raw.trim_start_matches(|c: char| c.is_ascii_punctuation()).len();
        let trimmed = raw.trim_matches(|c: char| c.is_ascii_punctuation());
        if trimmed.is_empty() {
            // A bare punctuation token closes any open run.
            let ends = raw.contains(['.', '!', '?']);
            out.push(Token {
                core: "",
                start: start_raw,
                end: start_raw,
                breaks_after: true,
                ends_sentence: ends,
            });
            continue;
        }
        let start = start_raw + lead;
        let end = start + trimmed.len();
        let tail = &raw[lead + trimmed.len()..];
        out.push(Token {
            core: trimmed,
            start,
            end,
            breaks_after: !tail.is_empty(),
            ends_sentence: tail.contains(['.', '!', '?']),
        });
    }
    out
}

fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
}

fn is_digits(word: &str) -> bool {
    !word.is_empty() && word.chars().all(|c| c.is_ascii_digit())
}

impl RuleBasedAnnotator {
    pub fn spans(&self, text: &str) -> Vec<EntitySpan> {
        let toks = tokens(text);
        let mut spans = Vec::new();
        let mut run: Option<(usize, usize, usize, bool)> = None; // (start, end, len, initial-stopword)
        let mut sentence_start = true;

        let close = |run: &mut Option<(usize, usize, usize, bool)>, spans: &mut Vec<EntitySpan>| {
            if let Some((start, end, len, lone_stop)) = run.take() {
                if !(len == 1 && lone_stop) {
                    spans.push(EntitySpan { start, end });
                }
            }
        };

        for tok in &toks {
            if tok.core.is_empty() {
                close(&mut run, &mut spans);
            } else if is_digits(tok.core) {
                close(&mut run, &mut spans);
                spans.push(EntitySpan {
                    start: tok.start,
                    end: tok.end,
                });
            } else if is_capitalized(tok.core) {
                match &mut run {
                    Some((_, end, len, _)) => {
                        *end = tok.end;
                        *len += 1;
                    }
                    None => {
                        let stop = sentence_start
                            && STOPWORDS.contains(&tok.core.to_lowercase().as_str());
                        run = Some((tok.start, tok.end, 1, stop));
                    }
                }
                if tok.breaks_after {
                    close(&mut run, &mut spans);
                }
            } else {
                close(&mut run, &mut spans);
            }
            sentence_start = tok.ends_sentence;
        }
        close(&mut run, &mut spans);
        spans
    }
}

impl EntityAnnotator for RuleBasedAnnotator {
    fn name(&self) -> &str {
        "rule-based"
    }

    fn annotate(&self, text: &str) -> std::result::Result<Vec<EntitySpan>, String> {
        Ok(self.spans(text))
    }
}

/// Returns a copy of `corpus` with every utterance's `entity_count` set to
/// the annotator's span count.
pub fn annotate_entities(corpus: &Corpus, annotator: &dyn EntityAnnotator) -> Result<Corpus> {
    let mut out = corpus.clone();
    for d in &mut out.dialogues {
        for (turn, u) in d.utterances.iter_mut().enumerate() {
            let spans = annotator
                .annotate(&u.text)
                .map_err(|message| CorpusError::Annotation {
                    annotator: annotator.name().to_string(),
                    id: d.id.clone(),
                    turn,
                    message,
                })?;
            u.entity_count = Some(spans.len() as u32);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dialogue, Split, Utterance};

    fn count(text: &str) -> usize {
        RuleBasedAnnotator.spans(text).len()
    }

    #[test]
    fn plain_lowercase_has_no_entities() {
        assert_eq!(count("ok"), 0);
    }

    #[test]
    fn booking_sentence() {
        // "Golden Wok" (one run), "Cambridge", "3"
        let text = "book Golden Wok in Cambridge for 3";
        let spans = RuleBasedAnnotator.spans(text);
        let words: Vec<&str> = spans.iter().map(|s| &text[s.start..s.end]).collect();
        assert_eq!(words, ["Golden Wok", "Cambridge", "3"]);
    }

    #[test]
    fn sentence_initial_stopword_alone_is_skipped() {
        assert_eq!(count("The food was fine"), 0);
        assert_eq!(count("Please call Bob"), 1);
        // Part of a longer run it still counts.
        assert_eq!(count("The Golden Curry is open"), 1);
        // Not sentence-initial: "I" mid-sentence is a capitalized token.
        assert_eq!(count("yes I do"), 1);
    }

    #[test]
    fn punctuation_ends_runs() {
        let text = "I like Cambridge, Ely and London.";
        let spans = RuleBasedAnnotator.spans(text);
        let words: Vec<&str> = spans.iter().map(|s| &text[s.start..s.end]).collect();
        assert_eq!(words, ["Cambridge", "Ely", "London"]);
        assert_eq!(count("Thanks. Goodbye!"), 0);
    }

    #[test]
    fn digits_break_capital_runs() {
        assert_eq!(count("table for 4 at 19:30 on Friday"), 2);
        assert_eq!(count("Room 12"), 2);
    }

    #[test]
    fn spans_are_ordered_and_disjoint() {
        let text = "  Meet  Anna Smith at 5 , then the Red Lion Pub .";
        let spans = RuleBasedAnnotator.spans(text);
        for w in spans.windows(2) {
            assert!(w[0].end <= w[1].start);
        }
        assert!(spans.iter().all(|s| s.start < s.end && s.end <= text.len()));
    }

    #[test]
    fn annotation_is_idempotent_and_pure() {
        let c = Corpus::new(
            "t",
            vec![Dialogue {
                id: "a".into(),
                domain: None,
                utterances: vec![
                    Utterance::user("book Golden Wok in Cambridge for 3"),
                    Utterance::system("ok"),
                ],
            }],
            Split::Train,
        )
        .unwrap();
        let once = annotate_entities(&c, &RuleBasedAnnotator).unwrap();
        let twice = annotate_entities(&once, &RuleBasedAnnotator).unwrap();
        assert_eq!(once, twice);
        assert!(c.dialogues[0].utterances[0].entity_count.is_none());
        assert_eq!(once.dialogues[0].utterances[0].entity_count, Some(3));
        assert_eq!(once.dialogues[0].utterances[1].entity_count, Some(0));
    }

    struct Failing;
    impl EntityAnnotator for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn annotate(&self, text: &str) -> std::result::Result<Vec<EntitySpan>, String> {
            if text.contains("boom") {
                Err("exploded".into())
            } else {
                Ok(vec![])
            }
        }
    }

    #[test]
    fn annotator_failure_names_dialogue_and_turn() {
        let c = Corpus::new(
            "t",
            vec![Dialogue {
                id: "x7".into(),
                domain: None,
                utterances: vec![Utterance::user("fine"), Utterance::system("boom")],
            }],
            Split::Train,
        )
        .unwrap();
        match annotate_entities(&c, &Failing) {
            Err(CorpusError::Annotation { id, turn, .. }) => {
                assert_eq!(id, "x7");
                assert_eq!(turn, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
