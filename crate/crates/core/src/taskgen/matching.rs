use super::{param_err, sample_accepted, MatchExample, Result, TaskGenError};
use crate::corpus::{Corpus, Speaker};
use crate::seed::rng_for;
use crate::task::PretrainTask;

/// Context-response matching examples: one per SYSTEM turn that has at
/// least one preceding turn, with `k_neg` negatives drawn from SYSTEM
/// utterances of other dialogues.
pub struct CrmStream<'a> {
    corpus: &'a Corpus,
    k_neg: usize,
    seed: u64,
    /// `(dialogue index, turn index)` of every SYSTEM utterance.
    pool: Vec<(usize, usize)>,
    dialogue: usize,
    turn: usize,
    skipped: usize,
}

impl CrmStream<'_> {
    /// Examples dropped because too few distinct negatives exist.
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl Iterator for CrmStream<'_> {
    type Item = MatchExample;

    fn next(&mut self) -> Option<MatchExample> {
        let dialogues = &self.corpus.dialogues;
        while let Some(d) = dialogues.get(self.dialogue) {
            if self.turn >= d.utterances.len() {
                self.dialogue += 1;
                self.turn = 0;
                continue;
            }
            let turn = self.turn;
            self.turn += 1;
            let gold = &d.utterances[turn];
            if turn == 0 || gold.speaker != Speaker::System {
                continue;
            }
            let di = self.dialogue;
            let mut rng = rng_for(self.seed, &format!("crm/{}/{turn}", d.id));
            let pool = &self.pool;
            let picked = sample_accepted(&mut rng, pool.len(), self.k_neg, |i| {
                let (od, ot) = pool[i];
                od != di && dialogues[od].utterances[ot].text != gold.text
            });
            match picked {
                Some(idx) => {
                    return Some(MatchExample {
                        dialogue_id: d.id.clone(),
                        turn,
                        context: d.utterances[..turn].to_vec(),
                        gold_response: gold.clone(),
                        negatives: idx
                            .into_iter()
                            .map(|i| {
                                let (od, ot) = pool[i];
                                dialogues[od].utterances[ot].clone()
                            })
                            .collect(),
                    })
                }
                None => {
                    log::warn!("CRM: {}/{turn} has fewer than {} negatives; skipped", d.id, self.k_neg);
                    self.skipped += 1;
                }
            }
        }
        None
    }
}

pub fn gen_crm(corpus: &Corpus, k_neg: usize, seed: u64) -> Result<CrmStream<'_>> {
    if corpus.is_empty() {
        return Err(TaskGenError::EmptyCorpus(PretrainTask::Crm));
    }
    if corpus.len() < 2 {
        return Err(TaskGenError::SingleDialogue(PretrainTask::Crm));
    }
    if k_neg < 1 {
        return Err(param_err(PretrainTask::Crm, "k_neg", "must be at least 1"));
    }
    let pool = corpus
        .dialogues
        .iter()
        .enumerate()
        .flat_map(|(di, d)| {
            d.utterances
                .iter()
                .enumerate()
                .filter(|(_, u)| u.speaker == Speaker::System)
                .map(move |(ti, _)| (di, ti))
        })
        .collect();
    Ok(CrmStream {
        corpus,
        k_neg,
        seed,
        pool,
        dialogue: 0,
        turn: 0,
        skipped: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dialogue, Split, Utterance};

    fn corpus(n: usize) -> Corpus {
        let dialogues = (0..n)
            .map(|i| Dialogue {
                id: format!("d{i}"),
                domain: None,
                utterances: vec![
                    Utterance::user(format!("u{i} a")),
                    Utterance::system(format!("s{i} a")),
                    Utterance::user(format!("u{i} b")),
                    Utterance::system(format!("s{i} b")),
                ],
            })
            .collect();
        Corpus::new("c", dialogues, Split::Train).unwrap()
    }

    #[test]
    fn one_example_per_system_turn() {
        let c = corpus(5);
        let exs: Vec<_> = gen_crm(&c, 3, 1).unwrap().collect();
        assert_eq!(exs.len(), 10);
        for ex in &exs {
            assert_eq!(ex.negatives.len(), 3);
            assert!(ex.negatives.iter().all(|n| n.text != ex.gold_response.text));
            assert!(ex.negatives.iter().all(|n| n.speaker == Speaker::System));
            assert_eq!(ex.context.len(), ex.turn);
        }
    }

    #[test]
    fn deterministic() {
        let c = corpus(6);
        let a: Vec<_> = gen_crm(&c, 4, 2).unwrap().collect();
        let b: Vec<_> = gen_crm(&c, 4, 2).unwrap().collect();
        assert_eq!(a, b);
        let other: Vec<_> = gen_crm(&c, 4, 3).unwrap().collect();
        assert_ne!(a, other);
    }

    #[test]
    fn single_dialogue_is_an_error() {
        assert!(matches!(gen_crm(&corpus(1), 3, 1), Err(TaskGenError::SingleDialogue(_))));
    }

    #[test]
    fn small_pool_skips() {
        let c = corpus(2);
        let mut s = gen_crm(&c, 3, 1).unwrap();
        assert_eq!(s.by_ref().count(), 0);
        assert_eq!(s.skipped(), 4);
    }
}
