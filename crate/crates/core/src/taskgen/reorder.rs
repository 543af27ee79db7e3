use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{param_err, ReorderExample, Result, TaskGenError};
use crate::corpus::Corpus;
use crate::kernels::softmax;
use crate::seed::rng_for;
use crate::task::PretrainTask;

/// Soft target for a shuffled window: softmax of each slot's correct
/// 1-based position.
pub fn reorder_target(permutation: &[usize]) -> Vec<f64> {
    let positions: Vec<f64> = permutation.iter().map(|&p| (p + 1) as f64).collect();
    softmax(&positions)
}

/// Reordering examples: one contiguous window per dialogue, shuffled by a
/// seeded non-identity permutation.
pub struct DurStream<'a> {
    corpus: &'a Corpus,
    window: usize,
    seed: u64,
    next: usize,
    skipped: usize,
}

impl DurStream<'_> {
    /// Dialogues shorter than the window.
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl Iterator for DurStream<'_> {
    type Item = ReorderExample;

    fn next(&mut self) -> Option<ReorderExample> {
        while let Some(d) = self.corpus.dialogues.get(self.next) {
            self.next += 1;
            let n = d.utterances.len();
            if n < self.window {
                log::warn!("DUR: dialogue {} shorter than window {}; skipped", d.id, self.window);
                self.skipped += 1;
                continue;
            }
            let mut rng = rng_for(self.seed, &format!("dur/{}", d.id));
            let start = rng.gen_range(0..=n - self.window);
            let identity: Vec<usize> = (0..self.window).collect();
            let mut permutation = identity.clone();
            while permutation == identity {
                permutation.shuffle(&mut rng);
            }
            let mut dialogue = d.clone();
            for (slot, &src) in permutation.iter().enumerate() {
                dialogue.utterances[start + slot] = d.utterances[start + src].clone();
            }
            return Some(ReorderExample {
                dialogue,
                window_start: start,
                target_distribution: reorder_target(&permutation),
                permutation,
            });
        }
        None
    }
}

pub fn gen_dur(corpus: &Corpus, window: usize, seed: u64) -> Result<DurStream<'_>> {
    if corpus.is_empty() {
        return Err(TaskGenError::EmptyCorpus(PretrainTask::Dur));
    }
    if window < 2 {
        return Err(param_err(PretrainTask::Dur, "window", "must be at least 2"));
    }
    Ok(DurStream {
        corpus,
        window,
        seed,
        next: 0,
        skipped: 0,
    })
}
