use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{param_err, sample_accepted, CoherenceExample, Result, TaskGenError};
use crate::corpus::{Corpus, Dialogue, Speaker};
use crate::seed::{rng_for, Rng};
use crate::task::PretrainTask;

/// Coherence examples, one per dialogue. A seeded
/// `round(corrupt_fraction * N)` of the dialogues have utterances swapped for
/// same-role utterances from other dialogues; the rest pass through unchanged.
pub struct DcvStream<'a> {
    corpus: &'a Corpus,
    replace_prob: f64,
    seed: u64,
    corrupt: Vec<bool>,
    user_pool: Vec<(usize, usize)>,
    system_pool: Vec<(usize, usize)>,
    next: usize,
    skipped: usize,
}

impl DcvStream<'_> {
    /// Selected dialogues for which no valid replacement existed.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Number of dialogues selected for corruption.
    pub fn corrupt_count(&self) -> usize {
        self.corrupt.iter().filter(|&&c| c).count()
    }

    fn replace_one(&self, rng: &mut Rng, di: usize, d: &Dialogue, pos: usize) -> Option<String> {
        let original = &d.utterances[pos];
        let pool = match original.speaker {
            Speaker::User => &self.user_pool,
            Speaker::System => &self.system_pool,
        };
        let dialogues = &self.corpus.dialogues;
        let idx = sample_accepted(rng, pool.len(), 1, |i| {
            let (od, ot) = pool[i];
            od != di && dialogues[od].utterances[ot].text != original.text
        })?;
        let (od, ot) = pool[idx[0]];
        Some(dialogues[od].utterances[ot].text.clone())
    }

    fn corrupt(&self, di: usize, d: &Dialogue) -> Option<CoherenceExample> {
        let mut rng = rng_for(self.seed, &format!("dcv/{}", d.id));
        let n = d.utterances.len();
        let mut marked: Vec<usize> = (0..n).filter(|_| rng.gen_bool(self.replace_prob)).collect();
        if marked.is_empty() {
            marked.push(rng.gen_range(0..n));
        }
        let mut out = d.clone();
        let mut replaced = Vec::new();
        for &pos in &marked {
            if let Some(text) = self.replace_one(&mut rng, di, d, pos) {
                out.utterances[pos].text = text;
                out.utterances[pos].entity_count = None;
                replaced.push(pos);
            }
        }
        if replaced.is_empty() {
            // Every marked slot lacked a candidate; try the rest in random order.
            let mut rest: Vec<usize> = (0..n).filter(|p| !marked.contains(p)).collect();
            rest.shuffle(&mut rng);
            for pos in rest {
                if let Some(text) = self.replace_one(&mut rng, di, d, pos) {
                    out.utterances[pos].text = text;
                    out.utterances[pos].entity_count = None;
                    replaced.push(pos);
                    break;
                }
            }
        }
        if replaced.is_empty() {
            return None;
        }
        Some(CoherenceExample {
            dialogue: out,
            label: 0,
            replaced_indices: replaced,
        })
    }
}

impl Iterator for DcvStream<'_> {
    type Item = CoherenceExample;

    fn next(&mut self) -> Option<CoherenceExample> {
        while let Some(d) = self.corpus.dialogues.get(self.next) {
            let di = self.next;
            self.next += 1;
            if !self.corrupt[di] {
                return Some(CoherenceExample {
                    dialogue: d.clone(),
                    label: 1,
                    replaced_indices: Vec::new(),
                });
            }
            match self.corrupt(di, d) {
                Some(ex) => return Some(ex),
                None => {
                    log::warn!("DCV: no replacement candidates for dialogue {}; skipped", d.id);
                    self.skipped += 1;
                }
            }
        }
        None
    }
}

pub fn gen_dcv(corpus: &Corpus, corrupt_fraction: f64, replace_prob: f64, seed: u64) -> Result<DcvStream<'_>> {
    if corpus.is_empty() {
        return Err(TaskGenError::EmptyCorpus(PretrainTask::Dcv));
    }
    if corpus.len() < 2 {
        return Err(TaskGenError::SingleDialogue(PretrainTask::Dcv));
    }
    if !(corrupt_fraction > 0.0 && corrupt_fraction < 1.0) {
        return Err(param_err(PretrainTask::Dcv, "corrupt_fraction", "must lie in (0, 1)"));
    }
    if !(replace_prob > 0.0 && replace_prob <= 1.0) {
        return Err(param_err(PretrainTask::Dcv, "replace_prob", "must lie in (0, 1]"));
    }
    let n = corpus.len();
    let k = (corrupt_fraction * n as f64).round() as usize;
    let mut corrupt = vec![false; n];
    for i in rand::seq::index::sample(&mut rng_for(seed, "dcv/select"), n, k) {
        corrupt[i] = true;
    }
    let pool_for = |role: Speaker| -> Vec<(usize, usize)> {
        corpus
            .dialogues
            .iter()
            .enumerate()
            .flat_map(|(di, d)| {
                d.utterances
                    .iter()
                    .enumerate()
                    .filter(move |(_, u)| u.speaker == role)
                    .map(move |(ti, _)| (di, ti))
            })
            .collect()
    };
    Ok(DcvStream {
        corpus,
        replace_prob,
        seed,
        corrupt,
        user_pool: pool_for(Speaker::User),
        system_pool: pool_for(Speaker::System),
        next: 0,
        skipped: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, Utterance};

    fn corpus(n: usize, len: usize) -> Corpus {
        let dialogues = (0..n)
            .map(|i| Dialogue {
                id: format!("d{i}"),
                domain: None,
                utterances: (0..len)
                    .map(|t| {
                        if t % 2 == 0 {
                            Utterance::user(format!("user {i} {t}"))
                        } else {
                            Utterance::system(format!("system {i} {t}"))
                        }
                    })
                    .collect(),
            })
            .collect();
        Corpus::new("c", dialogues, Split::Train).unwrap()
    }

    #[test]
    fn half_corrupted() {
        let c = corpus(100, 4);
        let exs: Vec<_> = gen_dcv(&c, 0.5, 0.3, 5).unwrap().collect();
        assert_eq!(exs.len(), 100);
        assert_eq!(exs.iter().filter(|e| e.label == 0).count(), 50);
    }

    #[test]
    fn corruption_invariants() {
        let c = corpus(30, 6);
        for ex in gen_dcv(&c, 0.5, 0.4, 2).unwrap() {
            let orig = c.dialogues.iter().find(|d| d.id == ex.dialogue.id).unwrap();
            assert_eq!(ex.dialogue.utterances.len(), orig.utterances.len());
            assert_eq!(ex.label == 1, ex.replaced_indices.is_empty());
            for (i, (a, b)) in ex.dialogue.utterances.iter().zip(&orig.utterances).enumerate() {
                assert_eq!(a.speaker, b.speaker);
                assert_eq!(ex.replaced_indices.contains(&i), a.text != b.text);
            }
        }
    }

    #[test]
    fn parameter_checks() {
        let c = corpus(2, 2);
        assert!(gen_dcv(&c, 0.0, 0.3, 1).is_err());
        assert!(gen_dcv(&c, 0.5, 0.0, 1).is_err());
        assert!(matches!(gen_dcv(&corpus(1, 2), 0.5, 0.3, 1), Err(TaskGenError::SingleDialogue(_))));
    }
}
