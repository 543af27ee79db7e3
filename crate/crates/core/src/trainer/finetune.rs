use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::objective::{IndexedDialogue, Objective, Splits};
use super::{train_loop, LoopSettings, Result, RunRecord, TrainConfig, TrainError};
use crate::corpus::downstream::{
    act_inventory, intent_inventory, load_downstream, load_ontology, ActRecord, DownstreamRecords, IntentRecord,
    Ontology, ResponseRecord, StateRecord,
};
use crate::corpus::Utterance;
use crate::encoder::{Provenance, SequenceEncoder};
use crate::heads::{self, HeadError};
use crate::metrics::{self, MetricReport};
use crate::model::{EncoderState, HeadSpec, Model, TaskHead};
use crate::seed::rng_for;
use crate::task::DownstreamTask;
use crate::taskgen::MatchExample;

/// Candidates per response-selection test example (gold plus 99 negatives).
pub const RS_POOL: usize = 100;

/// Value assumed for a (domain, slot) pair missing from a dialogue state.
pub const NONE_VALUE: &str = "none";

pub const DEFAULT_OOS_LABEL: &str = "oos";

/// Train/valid/test records of one downstream dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamData {
    pub task: DownstreamTask,
    pub dataset: String,
    pub train: DownstreamRecords,
    pub valid: DownstreamRecords,
    pub test: DownstreamRecords,
    /// Required for dialogue state tracking.
    pub ontology: Option<Ontology>,
    /// Out-of-scope intent label.
    pub oos_label: String,
}

impl DownstreamData {
    /// Reads `train.jsonl`, `valid.jsonl` and `test.jsonl` (plus
    /// `ontology.json` for state tracking) from `dir`.
    pub fn load(dir: impl AsRef<Path>, task: DownstreamTask, dataset: impl Into<String>) -> Result<Self> {
        let dir = dir.as_ref();
        let ontology = match task {
            DownstreamTask::Dst => Some(load_ontology(dir.join("ontology.json"))?),
            _ => None,
        };
        Ok(Self {
            task,
            dataset: dataset.into(),
            train: load_downstream(task, dir.join("train.jsonl"))?,
            valid: load_downstream(task, dir.join("valid.jsonl"))?,
            test: load_downstream(task, dir.join("test.jsonl"))?,
            ontology,
            oos_label: DEFAULT_OOS_LABEL.to_string(),
        })
    }

    fn splits(&self) -> [&DownstreamRecords; 3] {
        [&self.train, &self.valid, &self.test]
    }

    /// Head description derived from the label inventory of all splits.
    pub fn head_spec(&self, cfg: &TrainConfig) -> Result<HeadSpec> {
        for s in self.splits() {
            if s.task() != self.task {
                return Err(TrainError::Data(format!(
                    "{} split holds {} records",
                    self.task,
                    s.task()
                )));
            }
        }
        Ok(match self.task {
            DownstreamTask::Int => HeadSpec::Int {
                labels: intent_inventory(self.splits().map(intents)),
                oos_label: self.oos_label.clone(),
            },
            DownstreamTask::Da => HeadSpec::Da {
                acts: act_inventory(self.splits().map(acts)),
                threshold: cfg.da_threshold,
            },
            DownstreamTask::Rs => HeadSpec::Rs {
                temperature: cfg.temperature,
            },
            DownstreamTask::Dst => HeadSpec::Dst {
                ontology: self
                    .ontology
                    .clone()
                    .ok_or_else(|| TrainError::Data("state tracking needs an ontology".into()))?,
            },
        })
    }
}

fn intents(r: &DownstreamRecords) -> &[IntentRecord] {
    match r {
        DownstreamRecords::Int(v) => v,
        _ => &[],
    }
}

fn acts(r: &DownstreamRecords) -> &[ActRecord] {
    match r {
        DownstreamRecords::Da(v) => v,
        _ => &[],
    }
}

fn responses(r: &DownstreamRecords) -> &[ResponseRecord] {
    match r {
        DownstreamRecords::Rs(v) => v,
        _ => &[],
    }
}

fn states(r: &DownstreamRecords) -> &[StateRecord] {
    match r {
        DownstreamRecords::Dst(v) => v,
        _ => &[],
    }
}

fn label_index(labels: &[String], label: &str, what: &str) -> Result<usize> {
    labels
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| TrainError::Data(format!("unknown {what} {label:?}")))
}

/// Gold value index per ontology pair; absent pairs take [`NONE_VALUE`].
fn state_targets(ontology: &Ontology, rec: &StateRecord) -> Result<Vec<usize>> {
    for pair in rec.state.keys() {
        if !ontology.contains_key(pair) {
            return Err(TrainError::Data(format!("{}: pair {pair:?} is not in the ontology", rec.id)));
        }
    }
    ontology
        .iter()
        .map(|(pair, values)| {
            let v = rec.state.get(pair).map_or(NONE_VALUE, String::as_str);
            values
                .iter()
                .position(|x| x == v)
                .ok_or_else(|| TrainError::Data(format!("{}: value {v:?} of {pair:?} is not in the ontology", rec.id)))
        })
        .collect()
}

/// Distinct responses of other records, in a seeded order.
fn sample_negatives(records: &[ResponseRecord], i: usize, k: usize, seed: u64, key: &str) -> Option<Vec<String>> {
    let gold = &records[i].response;
    let mut pool: Vec<&str> = records
        .iter()
        .map(|r| r.response.as_str())
        .filter(|r| r != gold)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if pool.len() < k {
        return None;
    }
    let mut rng = rng_for(seed, key);
    pool.shuffle(&mut rng);
    Some(pool[..k].iter().map(|s| s.to_string()).collect())
}

fn rs_examples(records: &[ResponseRecord], k: usize, seed: u64, split: &str) -> Result<Vec<MatchExample>> {
    (0..records.len())
        .map(|i| {
            let r = &records[i];
            let negatives = sample_negatives(records, i, k, seed, &format!("rs/{split}/{}", r.id)).ok_or_else(|| {
                TrainError::Data(format!("{split} split has too few distinct responses for {k} negatives"))
            })?;
            Ok(MatchExample {
                dialogue_id: r.id.clone(),
                turn: r.context.len(),
                context: r.context.clone(),
                gold_response: Utterance::system(r.response.as_str()),
                negatives: negatives.into_iter().map(Utterance::system).collect(),
            })
        })
        .collect()
}

fn build_objective(
    data: &DownstreamData,
    spec: &HeadSpec,
    head: &TaskHead,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Objective> {
    Ok(match (spec, head) {
        (HeadSpec::Int { labels, .. }, TaskHead::Int(h)) => {
            let conv = |r: &DownstreamRecords| -> Result<Vec<(String, usize)>> {
                intents(r)
                    .iter()
                    .map(|x| Ok((x.text.clone(), label_index(labels, &x.intent, "intent")?)))
                    .collect()
            };
            Objective::int(h.clone(), Splits::new(conv(&data.train)?, conv(&data.valid)?))
        }
        (HeadSpec::Da { acts: inv, threshold }, TaskHead::Da(h)) => {
            let conv = |r: &DownstreamRecords| -> Result<Vec<IndexedDialogue>> {
                acts(r)
                    .iter()
                    .map(|x| {
                        let idx = x
                            .acts
                            .iter()
                            .map(|a| label_index(inv, a, "act"))
                            .collect::<Result<Vec<_>>>()?;
                        Ok((x.turns.clone(), idx))
                    })
                    .collect()
            };
            Objective::da(h.clone(), *threshold, Splits::new(conv(&data.train)?, conv(&data.valid)?))
        }
        (HeadSpec::Rs { temperature }, TaskHead::Rs) => {
            let train = rs_examples(responses(&data.train), cfg.rs_negatives, seed, "train")?;
            let valid = rs_examples(responses(&data.valid), cfg.rs_negatives, seed, "valid")?;
            Objective::rs(*temperature, Splits::new(train, valid))
        }
        (HeadSpec::Dst { ontology }, TaskHead::Dst(bank)) => {
            let conv = |r: &DownstreamRecords| -> Result<Vec<IndexedDialogue>> {
                states(r)
                    .iter()
                    .map(|x| Ok((x.turns.clone(), state_targets(ontology, x)?)))
                    .collect()
            };
            Objective::dst(bank.clone(), Splits::new(conv(&data.train)?, conv(&data.valid)?))
        }
        _ => unreachable!("head built from its spec"),
    })
}

/// Fine-tunes `base` on one downstream dataset and returns the model at the
/// best validation loss.
pub fn finetune(base: &EncoderState, data: &DownstreamData, cfg: &TrainConfig, seed: u64) -> Result<(Model, RunRecord)> {
    cfg.validate()?;
    let batch_size = cfg
        .finetune_batch_size
        .ok_or_else(|| TrainError::Config("finetune_batch_size must be set to fine-tune".into()))?;
    let learning_rate = match data.task {
        DownstreamTask::Dst => cfg.dst_learning_rate,
        _ => cfg.learning_rate,
    };
    let spec = data.head_spec(cfg)?;
    let mut store = base.store.clone();
    let encoder = base.encoder.clone();
    let head = TaskHead::init(&spec, &mut store, &encoder, seed)?;
    let objective = build_objective(data, &spec, &head, cfg, seed)?;
    log::info!(
        "fine-tuning {} on {} ({} train, {} valid)",
        data.task,
        data.dataset,
        objective.train_len(),
        objective.valid_len()
    );
    let (best, mut record) = train_loop(
        store,
        &encoder,
        std::slice::from_ref(&objective),
        cfg,
        LoopSettings {
            stage: "finetune",
            learning_rate,
            batch_size,
            seed,
        },
    )?;
    record.objectives = vec![data.task.to_string()];
    let model = Model {
        encoder,
        store: best,
        spec,
        head,
        provenance: Provenance {
            pretrain_tasks: base.provenance.pretrain_tasks.clone(),
            mlm: base.provenance.mlm,
            seed,
            steps: record.stopped_step,
            stage: "finetune".into(),
            finetune_task: Some(data.task),
        },
    };
    Ok((model, record))
}

/// Test pool for a response-selection record: the record's own negatives
/// when it carries exactly `RS_POOL - 1` of them, otherwise responses of
/// other records. The draw uses a fixed seed so every model sees the same
/// pools; the gold lands at a seeded position.
fn rs_pool(records: &[ResponseRecord], i: usize) -> Result<(Vec<String>, usize)> {
    let r = &records[i];
    let mut cands = if r.negatives.is_empty() {
        sample_negatives(records, i, RS_POOL - 1, 0, &format!("rs-eval/{}", r.id)).ok_or_else(|| {
            TrainError::Data(format!(
                "need {} distinct other responses to build a test pool",
                RS_POOL - 1
            ))
        })?
    } else if r.negatives.len() == RS_POOL - 1 {
        r.negatives.clone()
    } else {
        return Err(TrainError::Data(format!(
            "{}: {} negatives, expected {}",
            r.id,
            r.negatives.len(),
            RS_POOL - 1
        )));
    };
    let mut rng = rng_for(0, &format!("rs-eval/gold/{}", r.id));
    let pos = rand::Rng::gen_range(&mut rng, 0..=cands.len());
    cands.insert(pos, r.response.clone());
    Ok((cands, pos))
}

fn head_err(e: HeadError) -> TrainError {
    TrainError::Head(e)
}

/// Scores `model` on `records` (normally the data's test split).
pub fn evaluate(model: &Model, data: &DownstreamData, records: &DownstreamRecords) -> Result<MetricReport> {
    if records.task() != model.task() {
        return Err(TrainError::Data(format!(
            "{} model cannot score {} records",
            model.task(),
            records.task()
        )));
    }
    if records.is_empty() {
        return Err(crate::metrics::MetricError::Empty.into());
    }
    let enc = &model.encoder;
    let store = &model.store;
    let mut values = BTreeMap::new();
    match (&model.spec, &model.head) {
        (HeadSpec::Int { labels, oos_label }, TaskHead::Int(h)) => {
            let recs = intents(records);
            let oos = label_index(labels, oos_label, "out-of-scope label")?;
            let golds = recs
                .iter()
                .map(|r| label_index(labels, &r.intent, "intent"))
                .collect::<Result<Vec<_>>>()?;
            let preds = recs
                .par_iter()
                .map(|r| heads::int_predict(store, enc, h, &r.text))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(head_err)?;
            let s = metrics::intent_metrics(&preds, &golds, oos)?;
            values.insert(metrics::ACC_ALL.to_string(), s.acc_all);
            if let Some(v) = s.acc_in {
                values.insert(metrics::ACC_IN.to_string(), v);
            }
            values.insert(metrics::ACC_OUT.to_string(), s.acc_out);
            if let Some(v) = s.recall_out {
                values.insert(metrics::RECALL_OUT.to_string(), v);
            }
        }
        (HeadSpec::Da { acts: inv, threshold }, TaskHead::Da(h)) => {
            let recs = acts(records);
            let golds: Vec<BTreeSet<String>> = recs.iter().map(|r| r.acts.iter().cloned().collect()).collect();
            let preds = recs
                .par_iter()
                .map(|r| {
                    let idx = heads::da_predict(store, enc, h, &r.turns, *threshold)?;
                    Ok(idx.into_iter().map(|i| inv[i].clone()).collect::<BTreeSet<_>>())
                })
                .collect::<std::result::Result<Vec<_>, HeadError>>()
                .map_err(head_err)?;
            let (micro, macro_) = metrics::f1_multilabel(&preds, &golds, inv)?;
            values.insert(metrics::F1_MICRO.to_string(), micro);
            values.insert(metrics::F1_MACRO.to_string(), macro_);
        }
        (HeadSpec::Rs { .. }, TaskHead::Rs) => {
            let recs = responses(records);
            let pools = (0..recs.len()).map(|i| rs_pool(recs, i)).collect::<Result<Vec<_>>>()?;
            let texts: BTreeSet<&str> = pools.iter().flat_map(|(c, _)| c.iter().map(String::as_str)).collect();
            let cache: HashMap<&str, Vec<f64>> = texts
                .into_par_iter()
                .map(|t| {
                    let seq = enc.tokenize_utterance(&Utterance::system(t));
                    Ok((t, enc.encode(store, &seq)?.cls_vector))
                })
                .collect::<std::result::Result<_, crate::encoder::EncoderError>>()?;
            let scores = recs
                .par_iter()
                .zip(&pools)
                .map(|(r, (cands, gold))| {
                    let h = enc.encode(store, &enc.tokenize_dialogue(&r.context)?)?.cls_vector;
                    cands
                        .iter()
                        .enumerate()
                        .map(|(j, c)| Ok((heads::similarity(&h, &cache[c.as_str()])?, j == *gold)))
                        .collect::<std::result::Result<Vec<_>, HeadError>>()
                })
                .collect::<std::result::Result<Vec<_>, HeadError>>()
                .map_err(head_err)?;
            let r = metrics::recall_at_k(&scores, &[1, 3], RS_POOL)?;
            values.insert(metrics::R100_1.to_string(), r[&1]);
            values.insert(metrics::R100_3.to_string(), r[&3]);
        }
        (HeadSpec::Dst { ontology }, TaskHead::Dst(bank)) => {
            let recs = states(records);
            let golds = recs
                .iter()
                .map(|r| {
                    state_targets(ontology, r)?;
                    Ok(ontology
                        .keys()
                        .map(|p| (p.clone(), r.state.get(p).cloned().unwrap_or_else(|| NONE_VALUE.into())))
                        .collect::<BTreeMap<_, _>>())
                })
                .collect::<Result<Vec<_>>>()?;
            let preds = recs
                .par_iter()
                .map(|r| {
                    let idx = heads::dst_predict(store, enc, bank, &r.turns)?;
                    Ok(bank
                        .pairs
                        .iter()
                        .zip(idx)
                        .map(|(p, i)| (p.name.clone(), p.values[i].clone()))
                        .collect::<BTreeMap<_, _>>())
                })
                .collect::<std::result::Result<Vec<_>, HeadError>>()
                .map_err(head_err)?;
            let (joint, slot) = metrics::dst_metrics(&preds, &golds)?;
            values.insert(metrics::ACC_JOINT.to_string(), joint);
            values.insert(metrics::ACC_SLOT.to_string(), slot);
        }
        _ => unreachable!("head attached from its spec"),
    }
    Ok(MetricReport::single(model.task(), data.dataset.clone(), model.provenance.seed, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, response: &str) -> ResponseRecord {
        ResponseRecord {
            id: id.into(),
            context: vec![Utterance::user("hi")],
            response: response.into(),
            negatives: vec![],
        }
    }

    #[test]
    fn pools_exclude_gold_text_and_are_fixed() {
        let recs: Vec<_> = (0..150).map(|i| rec(&i.to_string(), &format!("reply {}", i % 120))).collect();
        let (a, gold) = rs_pool(&recs, 7).unwrap();
        assert_eq!(a.len(), RS_POOL);
        assert_eq!(a[gold], "reply 7");
        assert_eq!(a.iter().filter(|c| *c == "reply 7").count(), 1);
        assert_eq!(rs_pool(&recs, 7).unwrap(), (a, gold));
    }

    #[test]
    fn small_pool_is_a_data_error() {
        let recs: Vec<_> = (0..20).map(|i| rec(&i.to_string(), &format!("r{i}"))).collect();
        assert!(rs_pool(&recs, 0).unwrap_err().is_data_error());
    }

    #[test]
    fn missing_pairs_default_to_none() {
        let ontology: Ontology = [
            ("hotel-area".to_string(), vec!["none".into(), "north".into()]),
            ("hotel-stars".to_string(), vec!["none".into(), "4".into()]),
        ]
        .into();
        let r = StateRecord {
            id: "d".into(),
            turns: vec![Utterance::user("north please")],
            state: [("hotel-area".to_string(), "north".to_string())].into(),
        };
        assert_eq!(state_targets(&ontology, &r).unwrap(), vec![1, 0]);
        let bad = StateRecord {
            state: [("taxi-area".to_string(), "north".to_string())].into(),
            ..r
        };
        assert!(state_targets(&ontology, &bad).is_err());
    }
}
