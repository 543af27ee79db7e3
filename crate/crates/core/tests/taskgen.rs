mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use todpt::corpus::{load_corpus, Corpus, Speaker, Split};
use todpt::encoder::{tokenize_dialogue, Vocabulary};
use todpt::synthetic;
use todpt::taskgen::{
    gen_crm, gen_dcv, gen_dsp, gen_dur, gen_enp, gen_mlm, read_jsonl, reorder_target, write_jsonl, MlmConfig,
    ReorderExample, TaskGenError,
};

use common::{corpus_rng, corpus_texts, fixture, random_corpus};

fn sample() -> Corpus {
    load_corpus(fixture("sample_corpus.jsonl"), Split::Train).unwrap()
}

#[test]
fn dsp_yields_one_example_per_utterance() {
    let corpus = sample();
    let text = std::fs::read_to_string(fixture("sample_corpus.jsonl")).unwrap();
    let turns = text.matches("\"speaker\"").count();
    let examples: Vec<_> = gen_dsp(&corpus).unwrap().collect();
    assert_eq!(examples.len(), turns);
    assert_eq!(examples.len(), 412);
    for e in &examples {
        let expected = usize::from(e.utterance.speaker == Speaker::System);
        assert_eq!(e.label, expected);
    }
}

#[test]
fn enp_histogram_matches_recount() {
    let corpus = synthetic::pretrain_corpus("enp", 60, 3);
    let c_max = 3;
    let mut oracle: BTreeMap<usize, usize> = BTreeMap::new();
    for u in corpus.utterances() {
        *oracle.entry((u.entity_count.unwrap() as usize).min(c_max)).or_default() += 1;
    }
    let mut got: BTreeMap<usize, usize> = BTreeMap::new();
    for e in gen_enp(&corpus, c_max).unwrap() {
        *got.entry(e.count_class).or_default() += 1;
    }
    assert_eq!(got, oracle);
}

#[test]
fn enp_requires_annotations() {
    assert!(matches!(gen_enp(&sample(), 10).err(), Some(TaskGenError::Unannotated(_))));
}

#[test]
fn dcv_replacement_rate_matches_expectation() {
    // With candidates always available, a corrupted dialogue of n turns
    // replaces Binomial(n, p) turns, plus one forced turn when none is drawn.
    let p = 0.3;
    let (mut observed, mut expected, mut corrupted) = (0.0, 0.0, 0usize);
    for trial in 0..200 {
        let corpus = random_corpus(&mut corpus_rng(10_000 + trial), 12, 10);
        let lengths: BTreeMap<&str, usize> =
            corpus.dialogues.iter().map(|d| (d.id.as_str(), d.utterances.len())).collect();
        for e in gen_dcv(&corpus, 0.5, p, trial).unwrap().filter(|e| e.label == 0) {
            let n = lengths[e.dialogue.id.as_str()] as f64;
            observed += e.replaced_indices.len() as f64;
            expected += n * p + (1.0 - p).powf(n);
            corrupted += 1;
        }
    }
    assert!(corrupted > 500);
    let rel = (observed - expected).abs() / expected;
    assert!(rel < 0.05, "observed {observed}, expected {expected}");
}

#[test]
fn mlm_substitution_split() {
    let corpus = synthetic::pretrain_corpus("mlm", 300, 4);
    let vocab = Vocabulary::build(corpus_texts(&corpus).iter().map(String::as_str), 1, None);
    let cfg = MlmConfig::default();
    let (mut masked, mut total) = (0usize, 0usize);
    for (d, e) in corpus.dialogues.iter().zip(gen_mlm(&corpus, &vocab, cfg, 9).unwrap()) {
        assert_eq!(d.id, e.dialogue_id);
        let seq = tokenize_dialogue(&d.utterances, &vocab, cfg.max_len).unwrap();
        let eligible = seq.ids.iter().filter(|&&t| !Vocabulary::is_special(t) || t == Vocabulary::UNK_ID).count();
        assert_eq!(e.masked_positions.len(), (0.15 * eligible as f64).ceil() as usize);
        for (&p, &orig) in e.masked_positions.iter().zip(&e.original_ids) {
            assert_eq!(seq.ids[p], orig);
            total += 1;
            masked += usize::from(e.tokens[p] == Vocabulary::MASK_ID);
        }
        // Unchosen positions are untouched.
        for (i, (&a, &b)) in seq.ids.iter().zip(&e.tokens).enumerate() {
            if !e.masked_positions.contains(&i) {
                assert_eq!(a, b);
            }
        }
    }
    let rate = masked as f64 / total as f64;
    assert!(total > 2000 && (rate - 0.8).abs() <= 0.04, "{masked}/{total}");
}

#[test]
fn dur_targets_follow_positions() {
    // Hand case: [1, 2, 0] puts original offsets 1, 2, 0 in the window slots.
    let t = reorder_target(&[1, 2, 0]);
    let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
    for (got, want) in t.iter().zip([2f64.exp() / z, 3f64.exp() / z, 1f64.exp() / z]) {
        assert!((got - want).abs() < 1e-15);
    }
    let corpus = sample();
    let ex: Vec<ReorderExample> = gen_dur(&corpus, 3, 7).unwrap().collect();
    assert_eq!(ex.len(), corpus.len());
    for e in &ex {
        assert_eq!(e.target_distribution, reorder_target(&e.permutation));
        assert!(e.window_start + 3 <= e.dialogue.utterances.len());
    }
}

#[test]
fn streams_round_trip_through_jsonl() {
    let corpus = sample();
    let ex: Vec<_> = gen_crm(&corpus, 4, 3).unwrap().collect();
    let mut buf = Vec::new();
    assert_eq!(write_jsonl(ex.iter(), &mut buf).unwrap(), ex.len());
    let back: Vec<todpt::taskgen::MatchExample> = read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, ex);
}

#[test]
fn parameter_errors() {
    let corpus = sample();
    assert!(gen_dcv(&corpus, 0.0, 0.3, 1).is_err());
    assert!(gen_dcv(&corpus, 0.5, 0.0, 1).is_err());
    assert!(gen_dur(&corpus, 1, 1).is_err());
    assert!(gen_enp(&synthetic::pretrain_corpus("x", 3, 1), 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn crm_negatives_exclude_gold(seed in any::<u64>(), k in 1usize..5) {
        let corpus = random_corpus(&mut corpus_rng(seed), 8, 8);
        let mut stream = gen_crm(&corpus, k, seed).unwrap();
        let ex: Vec<_> = stream.by_ref().collect();
        // One example per SYSTEM turn that has a preceding turn.
        let responses = corpus
            .dialogues
            .iter()
            .flat_map(|d| d.utterances.iter().skip(1))
            .filter(|u| u.speaker == Speaker::System)
            .count();
        prop_assert_eq!(ex.len() + stream.skipped(), responses);
        for e in ex {
            prop_assert_eq!(e.negatives.len(), k);
            prop_assert!(e.negatives.iter().all(|n| n.text != e.gold_response.text));
            prop_assert_eq!(e.context.len(), e.turn);
        }
    }

    #[test]
    fn dcv_corrupts_round_half(seed in any::<u64>()) {
        let corpus = random_corpus(&mut corpus_rng(seed), 12, 6);
        let mut stream = gen_dcv(&corpus, 0.5, 0.3, seed).unwrap();
        let corrupted = stream.by_ref().filter(|e| e.label == 0).count();
        prop_assert_eq!(corrupted + stream.skipped(), (0.5 * corpus.len() as f64).round() as usize);
    }

    #[test]
    fn dur_permutations_are_never_identity(seed in any::<u64>(), window in 2usize..5) {
        let corpus = random_corpus(&mut corpus_rng(seed), 8, 8);
        for e in gen_dur(&corpus, window, seed).unwrap() {
            prop_assert!(e.permutation.iter().enumerate().any(|(i, &p)| i != p));
            let sum: f64 = e.target_distribution.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
