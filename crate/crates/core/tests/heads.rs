mod common;

use todpt::autograd::Tape;
use todpt::corpus::downstream::load_ontology;
use todpt::corpus::Utterance;
use todpt::encoder::{EncoderConfig, SequenceEncoder};
use todpt::heads::{self, LinearHead, SlotProjectionBank};
use todpt::kernels;
use todpt::model::{EncoderState, TaskHead};
use todpt::synthetic::{self, SplitSizes};
use todpt::task::DownstreamTask;
use todpt::trainer::{finetune, TrainConfig};

use common::{fixture, tiny_encoder};

#[test]
fn mwoz_ontology_gives_thirty_projections() {
    let ontology = load_ontology(fixture("mwoz_ontology.json")).unwrap();
    let texts: Vec<String> = ontology.values().flatten().cloned().collect();
    let (enc, mut store) = tiny_encoder(16, texts.iter().map(String::as_str), 1);
    let bank = SlotProjectionBank::build(&mut store, &enc, &ontology, 1).unwrap();
    assert_eq!(bank.len(), 30);
    for (pair, (name, values)) in bank.pairs.iter().zip(&ontology) {
        assert_eq!(&pair.name, name);
        assert!(store.is_frozen(pair.value_vectors()));
        assert_eq!(store.get(pair.value_vectors()).rows(), values.len());
    }
}

#[test]
fn value_cache_holds_value_encodings_and_gets_no_gradient() {
    let ontology = synthetic::ontology();
    let texts: Vec<String> = ontology.values().flatten().cloned().collect();
    let (enc, mut store) = tiny_encoder(16, texts.iter().map(String::as_str), 2);
    let bank = SlotProjectionBank::build(&mut store, &enc, &ontology, 2).unwrap();
    let pair = &bank.pairs[0];
    for (r, v) in pair.values.iter().enumerate() {
        let cls = enc.encode(&store, &enc.tokenize_text(v)).unwrap().cls_vector;
        assert_eq!(store.get(pair.value_vectors()).row(r), cls.as_slice());
    }
    let turns = [Utterance::user("a cheap hotel in the north please"), Utterance::system("sure")];
    let gold = vec![0; bank.len()];
    let mut tape = Tape::new(&store);
    let out = heads::dst_forward(&mut tape, &enc, &bank, &turns, &gold).unwrap();
    let grads = tape.backward(out.loss);
    for p in &bank.pairs {
        assert!(grads.get(p.value_vectors()).is_none_or(|g| g.data().iter().all(|x| *x == 0.0)));
    }
}

#[test]
fn value_cache_is_unchanged_by_fine_tuning() {
    let sizes = SplitSizes {
        train: 8,
        valid: 4,
        test: 4,
    };
    let data = synthetic::downstream(DownstreamTask::Dst, "frozen", sizes, 3);
    let corpus = synthetic::pretrain_corpus("frozen", 10, 3);
    let vocab = todpt::experiments::build_vocabulary(&corpus, std::slice::from_ref(&data), &Default::default());
    let base = EncoderState::init(EncoderConfig::tiny(16, 96), vocab, 3).unwrap();
    let cfg = TrainConfig {
        finetune_batch_size: Some(4),
        max_steps: 6,
        eval_every: Some(3),
        max_len: 96,
        ..TrainConfig::default()
    };
    let (model, _) = finetune(&base, &data, &cfg, 1).unwrap();
    let TaskHead::Dst(bank) = &model.head else {
        panic!("DST model without a slot bank")
    };
    let mut fresh = base.store.clone();
    let rebuilt = SlotProjectionBank::build(&mut fresh, &base.encoder, data.ontology.as_ref().unwrap(), 0).unwrap();
    for (a, b) in bank.pairs.iter().zip(&rebuilt.pairs) {
        assert_eq!(model.store.get(a.value_vectors()), fresh.get(b.value_vectors()));
    }
    // The encoder itself did move.
    let moved = model
        .store
        .iter()
        .filter(|(_, e)| !e.frozen)
        .any(|(id, e)| base.store.id(model.store.name(id)).is_some_and(|b| base.store.get(b) != &e.value));
    assert!(moved);
}

#[test]
fn two_value_cross_entropy_hand_case() {
    // Similarities (1, -1) with the gold first: ln(1 + e^-2).
    let expected = (1.0 + (-2.0f64).exp()).ln();
    assert!((kernels::cross_entropy(&[1.0, -1.0], 0) - expected).abs() < 1e-15);
    assert!((expected - 0.1269).abs() < 5e-5);
    assert!((heads::contrastive_from_similarities(1.0, &[-1.0], 1.0) - expected).abs() < 1e-15);
}

#[test]
fn da_threshold_is_strict() {
    // sigmoid(0) = 0.5 is not above a 0.5 threshold.
    assert_eq!(heads::threshold_acts(&[0.0, 0.1, -0.1], 0.5), vec![1]);
}

#[test]
fn linear_head_shapes() {
    let (enc, mut store) = tiny_encoder(16, ["hello there"], 4);
    let head = LinearHead::init(&mut store, "int", enc.hidden_size(), 7, 4).unwrap();
    assert_eq!(store.get(head.weight()).rows() * store.get(head.weight()).cols(), 16 * 7);
    assert!(LinearHead::init(&mut store, "one", 16, 1, 4).is_err());
}
