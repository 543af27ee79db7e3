use std::fmt;

use serde::{Deserialize, Serialize};

use super::objective::{Objective, Splits};
use super::{train_loop, LoopSettings, Result, RunRecord, TrainConfig, TrainError};
use crate::corpus::{split_corpus, Corpus};
use crate::encoder::{Provenance, ReferenceEncoder, SequenceEncoder};
use crate::heads::{LinearHead, ReorderScorer};
use crate::model::EncoderState;
use crate::task::PretrainTask;
use crate::taskgen::{self, MlmConfig, TaskGenError};

/// Which objectives a further pre-training run optimizes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PretrainPlan {
    /// Task-level objectives; MLM is controlled by `mlm`.
    pub tasks: Vec<PretrainTask>,
    #[serde(default = "default_true")]
    pub mlm: bool,
}

fn default_true() -> bool {
    true
}

impl PretrainPlan {
    /// Normalizes the task list: MLM entries move to the flag, duplicates go.
    pub fn new(tasks: impl IntoIterator<Item = PretrainTask>, mlm: bool) -> Self {
        let mut mlm = mlm;
        let mut list: Vec<PretrainTask> = Vec::new();
        for t in tasks {
            if t == PretrainTask::Mlm {
                mlm = true;
            } else if !list.contains(&t) {
                list.push(t);
            }
        }
        list.sort();
        Self { tasks: list, mlm }
    }

    /// Every objective in optimization order, MLM first.
    pub fn objectives(&self) -> Vec<PretrainTask> {
        let mut out = Vec::with_capacity(self.tasks.len() + 1);
        if self.mlm {
            out.push(PretrainTask::Mlm);
        }
        out.extend(&self.tasks);
        out
    }

    pub fn is_empty(&self) -> bool {
        !self.mlm && self.tasks.is_empty()
    }
}

impl fmt::Display for PretrainPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.objectives().iter().map(|t| t.as_str()).collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join("+"))
        }
    }
}

fn head_name(task: PretrainTask) -> String {
    format!("pretrain.{}", task.as_str().to_lowercase())
}

/// Builds the pre-training objectives over the train/valid dialogue splits,
/// adding head parameters to `store`.
pub fn pretrain_objectives(
    store: &mut crate::autograd::ParamStore,
    enc: &ReferenceEncoder,
    plan: &PretrainPlan,
    train: &Corpus,
    valid: &Corpus,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<Objective>> {
    let d = enc.hidden_size();
    let mlm_cfg = MlmConfig {
        mask_rate: cfg.mask_rate,
        max_len: cfg.max_len.min(enc.max_len()),
        ..MlmConfig::default()
    };
    let mut objectives = Vec::new();
    for task in plan.objectives() {
        let name = head_name(task);
        let obj = match task {
            PretrainTask::Mlm => {
                let head = LinearHead::init(store, &name, d, enc.vocab().len(), seed)?;
                let mut tr = taskgen::gen_mlm(train, enc.vocab(), mlm_cfg, seed)?;
                let train_ex: Vec<_> = tr.by_ref().collect();
                let valid_ex = taskgen::gen_mlm(valid, enc.vocab(), mlm_cfg, seed)?.collect();
                Objective::mlm(head, Splits::new(train_ex, valid_ex)).with_skipped(tr.skipped())
            }
            PretrainTask::Dsp => {
                let head = LinearHead::init(store, &name, d, 2, seed)?;
                let ex = Splits::new(taskgen::gen_dsp(train)?.collect(), taskgen::gen_dsp(valid)?.collect());
                Objective::dsp(head, ex)
            }
            PretrainTask::Crm => {
                let mut tr = taskgen::gen_crm(train, cfg.crm_negatives, seed)?;
                let train_ex: Vec<_> = tr.by_ref().collect();
                let valid_ex = taskgen::gen_crm(valid, cfg.crm_negatives, seed)?.collect();
                Objective::crm(cfg.temperature, Splits::new(train_ex, valid_ex)).with_skipped(tr.skipped())
            }
            PretrainTask::Dcv => {
                let head = LinearHead::init(store, &name, d, 2, seed)?;
                let mut tr = taskgen::gen_dcv(train, cfg.dcv_corrupt_fraction, cfg.dcv_replace_prob, seed)?;
                let train_ex: Vec<_> = tr.by_ref().collect();
                let valid_ex =
                    taskgen::gen_dcv(valid, cfg.dcv_corrupt_fraction, cfg.dcv_replace_prob, seed)?.collect();
                Objective::dcv(head, Splits::new(train_ex, valid_ex)).with_skipped(tr.skipped())
            }
            PretrainTask::Enp => {
                let head = LinearHead::init(store, &name, d, cfg.enp_max_count + 1, seed)?;
                let ex = Splits::new(
                    taskgen::gen_enp(train, cfg.enp_max_count)?.collect(),
                    taskgen::gen_enp(valid, cfg.enp_max_count)?.collect(),
                );
                Objective::enp(head, ex)
            }
            PretrainTask::Dur => {
                let scorer = ReorderScorer::init(store, &name, d, seed)?;
                let mut tr = taskgen::gen_dur(train, cfg.dur_window, seed)?;
                let train_ex: Vec<_> = tr.by_ref().collect();
                let valid_ex = taskgen::gen_dur(valid, cfg.dur_window, seed)?.collect();
                Objective::dur(scorer, Splits::new(train_ex, valid_ex)).with_skipped(tr.skipped())
            }
        };
        objectives.push(obj.with_weight(cfg.weight(task)));
    }
    Ok(objectives)
}

/// Task-level further pre-training of `init` on `corpus`.
///
/// The corpus is split into train/valid by `cfg.split_ratios`; every step
/// sums one weighted batch loss per objective. Returns the encoder at the
/// best validation loss, with task heads dropped.
pub fn further_pretrain(
    init: &EncoderState,
    plan: &PretrainPlan,
    corpus: &Corpus,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(EncoderState, RunRecord)> {
    cfg.validate()?;
    if plan.is_empty() {
        return Err(TrainError::Config(
            "no further pre-training objectives; use the base encoder directly".into(),
        ));
    }
    if plan.tasks.contains(&PretrainTask::Enp) && !corpus.is_annotated() {
        return Err(TaskGenError::Unannotated(corpus.name.clone()).into());
    }
    let (train, valid, _) = split_corpus(corpus, cfg.split_ratios, seed)?;
    let mut store = init.store.clone();
    let enc = init.encoder.clone();
    let objectives = pretrain_objectives(&mut store, &enc, plan, &train, &valid, cfg, seed)?;
    log::info!(
        "further pre-training {plan} on {} dialogues ({} valid)",
        train.len(),
        valid.len()
    );
    let (best, record) = train_loop(
        store,
        &enc,
        &objectives,
        cfg,
        LoopSettings {
            stage: "pretrain",
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            seed,
        },
    )?;
    let store = best.filtered(|n| n.starts_with("encoder."));
    let encoder = ReferenceEncoder::attach(enc.config().clone(), enc.vocab().clone(), &store)?;
    let state = EncoderState {
        encoder,
        store,
        provenance: Provenance {
            pretrain_tasks: plan.tasks.clone(),
            mlm: plan.mlm,
            seed,
            steps: record.stopped_step,
            stage: "pretrain".into(),
            finetune_task: None,
        },
    };
    Ok((state, record))
}
