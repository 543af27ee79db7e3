//! Further pre-training and fine-tuning loops.
//!
//! Both stages share one engine: every step draws a batch from each active
//! objective, sums the weighted mean losses, and takes one Adam step.
//! Validation runs on a fixed cadence with patience-based early stopping,
//! and the parameters at the best validation loss are returned.

mod adam;
mod finetune;
mod objective;
mod pretrain;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{Gradients, ParamStore, Tape};
use crate::corpus::CorpusError;
use crate::encoder::{EncoderError, ReferenceEncoder};
use crate::heads::HeadError;
use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::seed::rng_for;
use crate::task::PretrainTask;
use crate::taskgen::TaskGenError;

pub use adam::{Adam, AdamConfig};
pub use finetune::{evaluate, finetune, DownstreamData, DEFAULT_OOS_LABEL, NONE_VALUE, RS_POOL};
pub use objective::{IndexedDialogue, Objective, Splits};
pub use pretrain::{further_pretrain, pretrain_objectives, PretrainPlan};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    TaskGen(#[from] TaskGenError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("data: {0}")]
    Data(String),
    #[error("loss became non-finite at step {step} ({objective})")]
    Diverged { step: usize, objective: String },
}

impl TrainError {
    /// Whether the failure comes from input data rather than optimization.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            TrainError::Corpus(_) | TrainError::TaskGen(_) | TrainError::Data(_) | TrainError::Metric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate used when fine-tuning dialogue state tracking.
    pub dst_learning_rate: f64,
    /// Further pre-training batch size, per objective.
    pub batch_size: usize,
    /// Fine-tuning batch size; has no default and must be set to fine-tune.
    pub finetune_batch_size: Option<usize>,
    pub max_len: usize,
    pub seeds: Vec<u64>,
    /// Validation rounds without improvement before stopping.
    pub patience: usize,
    pub max_steps: usize,
    /// Steps between validation rounds; defaults to one epoch of the
    /// largest objective.
    pub eval_every: Option<usize>,
    /// Cap on validation examples per objective.
    pub max_valid_examples: Option<usize>,
    pub mlm_weight: f64,
    /// Weights of non-MLM objectives; missing entries weigh 1.
    pub task_weights: BTreeMap<PretrainTask, f64>,
    pub split_ratios: [f64; 3],
    pub mask_rate: f64,
    /// Negatives per context-response matching example.
    pub crm_negatives: usize,
    /// Negatives per response-selection training example.
    pub rs_negatives: usize,
    /// Cosine temperature shared by CRM and RS.
    pub temperature: f64,
    pub dcv_corrupt_fraction: f64,
    pub dcv_replace_prob: f64,
    pub dur_window: usize,
    pub enp_max_count: usize,
    pub da_threshold: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            dst_learning_rate: 3e-5,
            batch_size: 32,
            finetune_batch_size: None,
            max_len: 512,
            seeds: vec![1, 2, 3],
            patience: 3,
            max_steps: 10_000,
            eval_every: None,
            max_valid_examples: Some(512),
            mlm_weight: 1.0,
            task_weights: BTreeMap::new(),
            split_ratios: crate::corpus::DEFAULT_SPLIT_RATIOS,
            mask_rate: 0.15,
            crm_negatives: 9,
            rs_negatives: 9,
            temperature: 1.0,
            dcv_corrupt_fraction: 0.5,
            dcv_replace_prob: 0.3,
            dur_window: 3,
            enp_max_count: 10,
            da_threshold: 0.5,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.dst_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.finetune_batch_size == Some(0) {
            return bad("batch sizes must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if self.eval_every == Some(0) {
            return bad("eval_every must be at least 1");
        }
        if self.mlm_weight < 0.0 || self.task_weights.values().any(|w| !(*w >= 0.0)) {
            return bad("task weights must be non-negative");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.da_threshold > 0.0 && self.da_threshold < 1.0) {
            return bad("da_threshold must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn weight(&self, task: PretrainTask) -> f64 {
        match task {
            PretrainTask::Mlm => self.mlm_weight,
            t => self.task_weights.get(&t).copied().unwrap_or(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    /// Mean batch loss per objective (unweighted).
    pub losses: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub loss: f64,
    pub losses: BTreeMap<String, f64>,
    /// Fraction of validation examples predicted correctly, per objective.
    pub accuracy: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: String,
    pub objectives: Vec<String>,
    pub seed: u64,
    pub config: TrainConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: Vec<StepRecord>,
    pub validation: Vec<ValidationRecord>,
    /// Last step executed.
    pub stopped_step: usize,
    /// Step whose parameters were kept.
    pub best_step: usize,
    pub early_stopped: bool,
    /// Examples the generators skipped, per objective.
    pub skipped: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl RunRecord {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.total).collect()
    }
}

/// Per-example result of one objective.
struct ExampleResult {
    loss: f64,
    correct: bool,
    grads: Option<Gradients>,
}

fn run_example(
    store: &ParamStore,
    enc: &ReferenceEncoder,
    obj: &Objective,
    valid: bool,
    i: usize,
    with_grads: bool,
) -> std::result::Result<Option<ExampleResult>, HeadError> {
    let mut tape = Tape::new(store);
    let Some(out) = obj.forward(&mut tape, enc, valid, i)? else {
        return Ok(None);
    };
    let grads = with_grads.then(|| tape.backward(out.loss));
    Ok(Some(ExampleResult {
        loss: tape.scalar(out.loss),
        correct: out.correct,
        grads,
    }))
}

/// Mean loss and accuracy over the indices, or `None` if every example was
/// skipped. Gradients, when requested, are the mean over counted examples.
fn batch(
    store: &ParamStore,
    enc: &ReferenceEncoder,
    obj: &Objective,
    valid: bool,
    indices: &[usize],
    with_grads: bool,
) -> Result<Option<(f64, f64, Option<Gradients>)>> {
    let results: Vec<_> = indices
        .par_iter()
        .map(|&i| run_example(store, enc, obj, valid, i, with_grads))
        .collect();
    let mut n = 0usize;
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut grads = with_grads.then(|| Gradients::zeros_like(store));
    // Reduce in index order so sums do not depend on scheduling.
    for r in results {
        let Some(r) = r? else { continue };
        n += 1;
        loss += r.loss;
        correct += usize::from(r.correct);
        if let (Some(acc), Some(g)) = (grads.as_mut(), r.grads.as_ref()) {
            acc.merge(g);
        }
    }
    if n == 0 {
        return Ok(None);
    }
    if let Some(g) = grads.as_mut() {
        g.scale(1.0 / n as f64);
    }
    Ok(Some((loss / n as f64, correct as f64 / n as f64, grads)))
}

/// Cycles through a seeded permutation of `0..len`, reshuffling per epoch.
struct Sampler {
    key: String,
    seed: u64,
    len: usize,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
}

impl Sampler {
    fn new(seed: u64, key: String, len: usize) -> Self {
        let mut s = Self {
            key,
            seed,
            len,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        let mut rng = rng_for(self.seed, &format!("order/{}/{}", self.key, self.epoch));
        self.order = (0..self.len).collect();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.len) {
            if self.cursor == self.len {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Stage label, optimizer step size, per-objective batch size and seed of
/// one [`train_loop`] run.
#[derive(Debug, Clone, Copy)]
pub struct LoopSettings {
    pub stage: &'static str,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Weighted validation loss and per-objective diagnostics.
fn validate(
    store: &ParamStore,
    enc: &ReferenceEncoder,
    objectives: &[Objective],
    cap: Option<usize>,
    step: usize,
) -> Result<Option<ValidationRecord>> {
    let mut total = 0.0;
    let mut any = false;
    let mut losses = BTreeMap::new();
    let mut accuracy = BTreeMap::new();
    for obj in objectives {
        let n = obj.valid_len().min(cap.unwrap_or(usize::MAX));
        let idx: Vec<usize> = (0..n).collect();
        if let Some((loss, acc, _)) = batch(store, enc, obj, true, &idx, false)? {
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    step,
                    objective: obj.name.clone(),
                });
            }
            any = true;
            total += obj.weight * loss;
            losses.insert(obj.name.clone(), loss);
            accuracy.insert(obj.name.clone(), acc);
        }
    }
    Ok(any.then_some(ValidationRecord {
        step,
        loss: total,
        losses,
        accuracy,
    }))
}

/// The shared optimization loop. Returns the parameters at the best
/// validation loss (or the final ones if validation never produced a value).
pub fn train_loop(
    mut store: ParamStore,
    enc: &ReferenceEncoder,
    objectives: &[Objective],
    cfg: &TrainConfig,
    settings: LoopSettings,
) -> Result<(ParamStore, RunRecord)> {
    if objectives.is_empty() {
        return Err(TrainError::Config("no objectives to train".into()));
    }
    for obj in objectives {
        if obj.train_len() == 0 {
            return Err(TrainError::Data(format!("{} has no training examples", obj.name)));
        }
    }
    let mut samplers: Vec<Sampler> = objectives
        .iter()
        .map(|o| Sampler::new(settings.seed, o.name.clone(), o.train_len()))
        .collect();
    let epoch_steps = objectives
        .iter()
        .map(|o| o.train_len().div_ceil(settings.batch_size))
        .max()
        .unwrap_or(1);
    let eval_every = cfg.eval_every.unwrap_or(epoch_steps).max(1);
    let mut adam = Adam::new(cfg.adam, settings.learning_rate, &store);
    let mut record = RunRecord {
        stage: settings.stage.to_string(),
        objectives: objectives.iter().map(|o| o.name.clone()).collect(),
        seed: settings.seed,
        config: cfg.clone(),
        learning_rate: settings.learning_rate,
        batch_size: settings.batch_size,
        steps: Vec::new(),
        validation: Vec::new(),
        stopped_step: 0,
        best_step: 0,
        early_stopped: false,
        skipped: objectives.iter().map(|o| (o.name.clone(), o.skipped)).collect(),
        checkpoint: None,
    };
    let mut best: Option<(f64, ParamStore)> = None;
    let mut stale = 0;

    for step in 1..=cfg.max_steps {
        let mut total_grads = Gradients::zeros_like(&store);
        let mut total = 0.0;
        let mut losses = BTreeMap::new();
        for (obj, sampler) in objectives.iter().zip(samplers.iter_mut()) {
            let idx = sampler.next_batch(settings.batch_size);
            let Some((loss, _, grads)) = batch(&store, enc, obj, false, &idx, true)? else {
                continue;
            };
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    step,
                    objective: obj.name.clone(),
                });
            }
            let mut g = grads.expect("gradients requested");
            g.scale(obj.weight);
            total_grads.merge(&g);
            total += obj.weight * loss;
            losses.insert(obj.name.clone(), loss);
        }
        adam.step(&mut store, &total_grads);
        if let Some(name) = store.first_non_finite() {
            return Err(TrainError::Diverged {
                step,
                objective: format!("parameter {name}"),
            });
        }
        record.steps.push(StepRecord { step, total, losses });
        record.stopped_step = step;

        if step % eval_every == 0 || step == cfg.max_steps {
            if let Some(v) = validate(&store, enc, objectives, cfg.max_valid_examples, step)? {
                log::debug!("{} step {step}: validation loss {:.6}", settings.stage, v.loss);
                let improved = best.as_ref().is_none_or(|(b, _)| v.loss < *b);
                if improved {
                    best = Some((v.loss, store.clone()));
                    record.best_step = step;
                    stale = 0;
                } else {
                    stale += 1;
                }
                record.validation.push(v);
                if stale >= cfg.patience.max(1) {
                    record.early_stopped = true;
                    break;
                }
            }
        }
    }
    match best {
        Some((_, s)) => Ok((s, record)),
        None => {
            record.best_step = record.stopped_step;
            Ok((store, record))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = Sampler::new(1, "x".into(), 5);
        let mut seen: Vec<usize> = s.next_batch(3);
        seen.extend(s.next_batch(2));
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next_batch(7).len(), 5);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            seeds: vec![],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(TrainConfig::default().weight(PretrainTask::Crm), 1.0);
    }

    #[test]
    fn config_defaults_from_partial_toml() {
        let cfg: TrainConfig = toml::from_str("learning_rate = 0.001\nfinetune_batch_size = 8").unwrap();
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.finetune_batch_size, Some(8));
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.dst_learning_rate, 3e-5);
    }
}
