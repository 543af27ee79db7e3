mod common;

use todpt::corpus::{load_corpus, Split};
use todpt::encoder::{EncoderConfig, Vocabulary};
use todpt::model::{EncoderState, Model};
use todpt::synthetic::{self, SplitSizes};
use todpt::task::{DownstreamTask, PretrainTask};
use todpt::trainer::{evaluate, finetune, further_pretrain, PretrainPlan, TrainConfig, TrainError};

use common::{corpus_texts, fixture};

fn small_cfg(max_steps: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        dst_learning_rate: 2e-3,
        batch_size: 8,
        finetune_batch_size: Some(8),
        max_len: 96,
        max_steps,
        eval_every: Some(max_steps.div_ceil(4)),
        patience: usize::MAX,
        max_valid_examples: Some(16),
        ..TrainConfig::default()
    }
}

fn sample_state(seed: u64) -> (todpt::corpus::Corpus, EncoderState) {
    let corpus = load_corpus(fixture("sample_corpus.jsonl"), Split::Train).unwrap();
    let vocab = Vocabulary::build(corpus_texts(&corpus).iter().map(String::as_str), 1, None);
    let state = EncoderState::init(EncoderConfig::tiny(16, 96), vocab, seed).unwrap();
    (corpus, state)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn five_hundred_steps_reduce_smoothed_loss() {
    let (corpus, state) = sample_state(1);
    let plan = PretrainPlan::new([PretrainTask::Dsp], true);
    let (_, record) = further_pretrain(&state, &plan, &corpus, &small_cfg(500), 1).unwrap();
    let losses = record.losses();
    assert_eq!(losses.len(), 500);
    // 50-step moving averages at the start and the end.
    let first = mean(&losses[..50]);
    let last = mean(&losses[450..]);
    assert!(last <= 0.7 * first, "smoothed loss {first:.4} -> {last:.4}");
    assert_eq!(record.objectives, ["MLM", "DSP"]);
}

#[test]
fn no_mlm_plan_trains_only_the_task_objective() {
    let (corpus, state) = sample_state(2);
    let plan = PretrainPlan::new([PretrainTask::Crm], false);
    let (encoder, record) = further_pretrain(&state, &plan, &corpus, &small_cfg(4), 2).unwrap();
    assert_eq!(record.objectives, ["CRM"]);
    assert!(record.steps.iter().all(|s| s.losses.keys().eq(["CRM"])));
    assert!(!encoder.provenance.mlm);
    assert_eq!(encoder.provenance.pretrain_tasks, [PretrainTask::Crm]);
    // Heads are dropped from the returned encoder.
    assert!(encoder.store.iter().all(|(id, _)| encoder.store.name(id).starts_with("encoder.")));
}

#[test]
fn empty_plan_is_a_config_error() {
    let (corpus, state) = sample_state(3);
    let err = further_pretrain(&state, &PretrainPlan::new([], false), &corpus, &small_cfg(4), 3).unwrap_err();
    assert!(matches!(err, TrainError::Config(_)));
}

#[test]
fn enp_needs_annotations() {
    let (corpus, state) = sample_state(3);
    let err = further_pretrain(&state, &PretrainPlan::new([PretrainTask::Enp], true), &corpus, &small_cfg(4), 3)
        .unwrap_err();
    assert!(err.is_data_error());
}

#[test]
fn checkpoints_round_trip_bit_exact() {
    let (corpus, state) = sample_state(4);
    let (trained, _) =
        further_pretrain(&state, &PretrainPlan::new([PretrainTask::Dsp], false), &corpus, &small_cfg(3), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("encoder.json");
    trained.save(&path).unwrap();
    let back = EncoderState::load(&path).unwrap();
    assert_eq!(back.store.len(), trained.store.len());
    for (id, entry) in trained.store.iter() {
        let other = back.store.id(trained.store.name(id)).unwrap();
        let (a, b) = (entry.value.data(), back.store.get(other).data());
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back.provenance, trained.provenance);
}

#[test]
fn dst_fine_tuning_uses_its_own_learning_rate() {
    let sizes = SplitSizes {
        train: 8,
        valid: 4,
        test: 4,
    };
    let data = synthetic::downstream(DownstreamTask::Dst, "lr", sizes, 5);
    let corpus = synthetic::pretrain_corpus("lr", 10, 5);
    let vocab = todpt::experiments::build_vocabulary(&corpus, std::slice::from_ref(&data), &Default::default());
    let base = EncoderState::init(EncoderConfig::tiny(16, 96), vocab, 5).unwrap();
    let cfg = small_cfg(4);
    let (model, record) = finetune(&base, &data, &cfg, 5).unwrap();
    assert_eq!(record.learning_rate, cfg.dst_learning_rate);

    let int = synthetic::downstream(DownstreamTask::Int, "lr", sizes, 5);
    let (_, int_record) = finetune(&base, &int, &cfg, 5).unwrap();
    assert_eq!(int_record.learning_rate, cfg.learning_rate);

    // Saved models reload and score identically.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    let a = evaluate(&model, &data, &data.test).unwrap();
    let b = evaluate(&back, &data, &data.test).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fine_tuning_requires_a_batch_size() {
    let data = synthetic::downstream(DownstreamTask::Int, "bs", SplitSizes { train: 4, valid: 2, test: 2 }, 1);
    let corpus = synthetic::pretrain_corpus("bs", 4, 1);
    let vocab = todpt::experiments::build_vocabulary(&corpus, std::slice::from_ref(&data), &Default::default());
    let base = EncoderState::init(EncoderConfig::tiny(16, 96), vocab, 1).unwrap();
    let cfg = TrainConfig {
        finetune_batch_size: None,
        ..small_cfg(2)
    };
    assert!(matches!(finetune(&base, &data, &cfg, 1).unwrap_err(), TrainError::Config(_)));
}

#[test]
fn training_is_deterministic() {
    let (corpus, state) = sample_state(6);
    let plan = PretrainPlan::new([PretrainTask::Dur], false);
    let (_, a) = further_pretrain(&state, &plan, &corpus, &small_cfg(6), 6).unwrap();
    let (_, b) = further_pretrain(&state, &plan, &corpus, &small_cfg(6), 6).unwrap();
    assert_eq!(a.losses(), b.losses());
    let (_, c) = further_pretrain(&state, &plan, &corpus, &small_cfg(6), 7).unwrap();
    assert_ne!(a.losses(), c.losses());
}
