use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{param_err, MaskedExample, Result, TaskGenError};
use crate::corpus::Corpus;
use crate::encoder::{tokenize_dialogue, Vocabulary};
use crate::seed::{rng_for, Rng};
use crate::task::PretrainTask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmConfig {
    pub mask_rate: f64,
    /// Probability a chosen position becomes `[MASK]`.
    pub mask_prob: f64,
    /// Probability a chosen position becomes a random regular token.
    pub random_prob: f64,
    pub max_len: usize,
}

impl Default for MlmConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            mask_prob: 0.8,
            random_prob: 0.1,
            max_len: 512,
        }
    }
}

impl MlmConfig {
    fn validate(&self) -> Result<()> {
        let bad = |name, m: &str| Err(param_err(PretrainTask::Mlm, name, m));
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad("mask_rate", "must lie in (0, 1)");
        }
        if !(self.mask_prob >= 0.0 && self.random_prob >= 0.0 && self.mask_prob + self.random_prob <= 1.0) {
            return bad("mask_prob", "substitution probabilities must be non-negative and sum to at most 1");
        }
        if self.max_len < 4 {
            return bad("max_len", "must be at least 4");
        }
        Ok(())
    }
}

/// Positions that may be masked: ordinary words and `[UNK]`, never the
/// structural markers.
fn eligible(id: u32) -> bool {
    !Vocabulary::is_special(id) || id == Vocabulary::UNK_ID
}

/// Masks `ceil(mask_rate * eligible)` positions of `ids`. Chosen positions
/// become `[MASK]`, a random regular token, or stay unchanged according to
/// the configured split. `None` when fewer than 2 positions are eligible.
pub fn mask_sequence(
    ids: &[u32],
    vocab: &Vocabulary,
    cfg: &MlmConfig,
    rng: &mut Rng,
) -> Option<(Vec<u32>, Vec<usize>, Vec<u32>)> {
    let candidates: Vec<usize> = (0..ids.len()).filter(|&i| eligible(ids[i])).collect();
    if candidates.len() < 2 {
        return None;
    }
    let n_mask = ((cfg.mask_rate * candidates.len() as f64).ceil() as usize).clamp(1, candidates.len());
    let mut positions: Vec<usize> = rand::seq::index::sample(rng, candidates.len(), n_mask)
        .into_iter()
        .map(|j| candidates[j])
        .collect();
    positions.sort_unstable();
    let regular = vocab.regular_ids();
    let mut tokens = ids.to_vec();
    let mut originals = Vec::with_capacity(n_mask);
    for &p in &positions {
        originals.push(ids[p]);
        let r: f64 = rng.gen();
        if r < cfg.mask_prob {
            tokens[p] = Vocabulary::MASK_ID;
        } else if r < cfg.mask_prob + cfg.random_prob && !regular.is_empty() {
            tokens[p] = rng.gen_range(regular.clone());
        }
    }
    Some((tokens, positions, originals))
}

/// Masked-token examples, one per dialogue, over the marker-flattened
/// dialogue.
pub struct MlmStream<'a> {
    corpus: &'a Corpus,
    vocab: &'a Vocabulary,
    cfg: MlmConfig,
    seed: u64,
    next: usize,
    skipped: usize,
}

impl MlmStream<'_> {
    /// Dialogues skipped so far for having fewer than 2 maskable tokens.
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl Iterator for MlmStream<'_> {
    type Item = MaskedExample;

    fn next(&mut self) -> Option<MaskedExample> {
        while let Some(d) = self.corpus.dialogues.get(self.next) {
            self.next += 1;
            let seq = match tokenize_dialogue(&d.utterances, self.vocab, self.cfg.max_len) {
                Ok(s) => s,
                Err(_) => {
                    self.skipped += 1;
                    continue;
                }
            };
            let mut rng = rng_for(self.seed, &format!("mlm/{}", d.id));
            match mask_sequence(&seq.ids, self.vocab, &self.cfg, &mut rng) {
                Some((tokens, masked_positions, original_ids)) => {
                    return Some(MaskedExample {
                        dialogue_id: d.id.clone(),
                        tokens,
                        masked_positions,
                        original_ids,
                    })
                }
                None => {
                    log::warn!("MLM: dialogue {} has too few tokens to mask; skipped", d.id);
                    self.skipped += 1;
                }
            }
        }
        None
    }
}

pub fn gen_mlm<'a>(corpus: &'a Corpus, vocab: &'a Vocabulary, cfg: MlmConfig, seed: u64) -> Result<MlmStream<'a>> {
    if corpus.is_empty() {
        return Err(TaskGenError::EmptyCorpus(PretrainTask::Mlm));
    }
    cfg.validate()?;
    Ok(MlmStream {
        corpus,
        vocab,
        cfg,
        seed,
        next: 0,
        skipped: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dialogue, Split, Utterance};

    fn vocab() -> Vocabulary {
        Vocabulary::build(["a b c d e f g h i j"], 1, None)
    }

    #[test]
    fn ten_tokens_mask_two() {
        let v = vocab();
        let ids: Vec<u32> = std::iter::once(Vocabulary::CLS_ID)
            .chain((0..10).map(|i| v.id(&((b'a' + i) as char).to_string())))
            .chain(std::iter::once(Vocabulary::SEP_ID))
            .collect();
        let mut rng = rng_for(3, "t");
        let (_, pos, orig) = mask_sequence(&ids, &v, &MlmConfig::default(), &mut rng).unwrap();
        assert_eq!(pos.len(), 2);
        assert_eq!(orig.len(), 2);
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(pos.iter().all(|&p| p > 0 && p < 11));
    }

    #[test]
    fn too_short_returns_none() {
        let v = vocab();
        let mut rng = rng_for(3, "t");
        let ids = [Vocabulary::CLS_ID, Vocabulary::USR_ID, v.id("a"), Vocabulary::SEP_ID];
        assert!(mask_sequence(&ids, &v, &MlmConfig::default(), &mut rng).is_none());
    }

    #[test]
    fn stream_is_deterministic_and_skips_markers() {
        let v = vocab();
        let d = Dialogue {
            id: "x".into(),
            domain: None,
            utterances: vec![Utterance::user("a b c d"), Utterance::system("e f g h i j")],
        };
        let c = Corpus::new("c", vec![d], Split::Train).unwrap();
        let a: Vec<_> = gen_mlm(&c, &v, MlmConfig::default(), 9).unwrap().collect();
        let b: Vec<_> = gen_mlm(&c, &v, MlmConfig::default(), 9).unwrap().collect();
        assert_eq!(a, b);
        for ex in &a {
            for (&p, &o) in ex.masked_positions.iter().zip(&ex.original_ids) {
                assert!(eligible(o), "masked a marker at {p}");
            }
        }
    }

    #[test]
    fn rejects_bad_rate() {
        let v = vocab();
        let c = Corpus::new(
            "c",
            vec![Dialogue {
                id: "x".into(),
                domain: None,
                utterances: vec![Utterance::user("a"), Utterance::system("b")],
            }],
            Split::Train,
        )
        .unwrap();
        let cfg = MlmConfig {
            mask_rate: 1.0,
            ..MlmConfig::default()
        };
        assert!(gen_mlm(&c, &v, cfg, 1).is_err());
    }
}
