//! Verb implementations. Each validates its options, does the work and
//! returns the JSON summary printed on success.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use todpt::corpus::adapters::from_multiwoz_json;
use todpt::corpus::{annotate_entities, load_corpus, Corpus, RuleBasedAnnotator, Split};
use todpt::encoder::{EncoderConfig, SequenceEncoder, Vocabulary};
use todpt::experiments::{emit_report, run_matrix, AffinityTable, ExperimentSpec, MatrixOptions, ResultStore};
use todpt::model::{EncoderState, Model};
use todpt::task::{DownstreamTask, PretrainTask};
use todpt::taskgen::{self, MlmConfig};
use todpt::trainer::{evaluate, finetune, further_pretrain, DownstreamData, PretrainPlan, RunRecord, TrainConfig};

use crate::{
    AnnotateArgs, Cli, Command, EncoderFlags, EvalArgs, EvalSplit, FinetuneArgs, GenArgs, IngestArgs, InputFormat,
    MatrixArgs, PretrainArgs, ReportArgs, TrainFlags, TrainingFailure, UsageError,
};

pub fn run(cli: Cli) -> Result<Value> {
    let data = DataDir(cli.data_dir);
    match cli.command {
        Command::Ingest(a) => ingest(&data, a),
        Command::Annotate(a) => annotate(&data, a),
        Command::Gen(a) => gen(&data, a),
        Command::Pretrain(a) => pretrain(&data, a),
        Command::Finetune(a) => finetune_cmd(&data, a),
        Command::Eval(a) => eval(&data, a),
        Command::Matrix(a) => matrix(&data, a),
        Command::Report(a) => report(a),
    }
}

/// Resolves relative input paths against the data directory, when set.
struct DataDir(Option<PathBuf>);

impl DataDir {
    fn input(&self, p: &Path) -> PathBuf {
        match &self.0 {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn pretrain_task(s: &str) -> Result<PretrainTask> {
    s.parse().map_err(|_| usage(format!("unknown pre-training task {s:?}; expected mlm, dsp, crm, dcv, enp or dur")))
}

fn downstream_task(s: &str) -> Result<DownstreamTask> {
    s.parse().map_err(|_| usage(format!("unknown downstream task {s:?}; expected int, da, rs or dst")))
}

fn load(data: &DataDir, path: &Path) -> Result<Corpus> {
    let path = data.input(path);
    load_corpus(&path, Split::Train).with_context(|| format!("loading corpus {}", path.display()))
}

fn corpus_summary(command: &str, corpus: &Corpus, out: &Path) -> Value {
    json!({
        "command": command,
        "corpus": corpus.name,
        "dialogues": corpus.len(),
        "utterances": corpus.utterance_count(),
        "annotated": corpus.is_annotated(),
        "content_hash": corpus.content_hash(),
        "out": out,
    })
}

fn ingest(data: &DataDir, a: IngestArgs) -> Result<Value> {
    let path = data.input(&a.input);
    let corpus = match a.format {
        InputFormat::Jsonl => load_corpus(&path, Split::Train)?,
        InputFormat::Multiwoz => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            from_multiwoz_json(&stem, &text, Split::Train)?
        }
    };
    let corpus = match a.name {
        Some(name) => Corpus::new(name, corpus.dialogues, corpus.split)?,
        None => corpus,
    };
    corpus.save(&a.out)?;
    Ok(corpus_summary("ingest", &corpus, &a.out))
}

fn annotate(data: &DataDir, a: AnnotateArgs) -> Result<Value> {
    let corpus = load(data, &a.input)?;
    let annotated = annotate_entities(&corpus, &RuleBasedAnnotator)?;
    annotated.save(&a.out)?;
    let entities: u64 = annotated.utterances().map(|u| u64::from(u.entity_count.unwrap_or(0))).sum();
    let mut summary = corpus_summary("annotate", &annotated, &a.out);
    summary["entities"] = json!(entities);
    Ok(summary)
}

fn write_examples<T: serde::Serialize>(out: &Path, examples: impl IntoIterator<Item = T>) -> Result<usize> {
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    let n = taskgen::write_jsonl(examples, &mut w)?;
    w.flush()?;
    Ok(n)
}

fn gen(data: &DataDir, a: GenArgs) -> Result<Value> {
    let task = pretrain_task(&a.task)?;
    if a.window < 2 && task == PretrainTask::Dur {
        return Err(usage("--window must be at least 2"));
    }
    let corpus = load(data, &a.input)?;
    let (examples, skipped) = match task {
        PretrainTask::Mlm => {
            let vocab = match &a.vocab_from {
                Some(p) => EncoderState::load(data.input(p))?.encoder.vocab().clone(),
                None => Vocabulary::build(corpus.utterances().map(|u| u.text.as_str()), 1, None),
            };
            let cfg = MlmConfig {
                mask_rate: a.mask_rate,
                max_len: a.max_len,
                ..MlmConfig::default()
            };
            let mut s = taskgen::gen_mlm(&corpus, &vocab, cfg, a.seed)?;
            let n = write_examples(&a.out, s.by_ref())?;
            (n, s.skipped())
        }
        PretrainTask::Dsp => (write_examples(&a.out, taskgen::gen_dsp(&corpus)?)?, 0),
        PretrainTask::Crm => {
            let mut s = taskgen::gen_crm(&corpus, a.negatives, a.seed)?;
            let n = write_examples(&a.out, s.by_ref())?;
            (n, s.skipped())
        }
        PretrainTask::Dcv => {
            let mut s = taskgen::gen_dcv(&corpus, a.corrupt_fraction, a.replace_prob, a.seed)?;
            let n = write_examples(&a.out, s.by_ref())?;
            (n, s.skipped())
        }
        PretrainTask::Enp => (write_examples(&a.out, taskgen::gen_enp(&corpus, a.max_count)?)?, 0),
        PretrainTask::Dur => {
            let mut s = taskgen::gen_dur(&corpus, a.window, a.seed)?;
            let n = write_examples(&a.out, s.by_ref())?;
            (n, s.skipped())
        }
    };
    Ok(json!({
        "command": "gen",
        "task": task.as_str(),
        "seed": a.seed,
        "examples": examples,
        "skipped": skipped,
        "out": a.out,
    }))
}

/// Built-in defaults, then `--config`, then flags.
fn train_config(data: &DataDir, f: &TrainFlags) -> Result<TrainConfig> {
    let mut cfg = match &f.config {
        Some(p) => {
            let p = data.input(p);
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = f.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = f.dst_lr {
        cfg.dst_learning_rate = v;
    }
    if let Some(v) = f.max_steps {
        cfg.max_steps = v;
    }
    if let Some(v) = f.eval_every {
        cfg.eval_every = Some(v);
    }
    if let Some(v) = f.patience {
        cfg.patience = v;
    }
    if let Some(v) = f.max_len {
        cfg.max_len = v;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn write_record(path: Option<&PathBuf>, record: &RunRecord) -> Result<()> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(record)?;
        std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn run_summary(command: &str, record: &RunRecord, out: &Path) -> Value {
    json!({
        "command": command,
        "objectives": record.objectives,
        "seed": record.seed,
        "steps": record.steps.len(),
        "best_step": record.best_step,
        "early_stopped": record.early_stopped,
        "final_loss": record.steps.last().map(|s| s.total),
        "best_validation_loss": record.validation.iter().find(|v| v.step == record.best_step).map(|v| v.loss),
        "skipped": record.skipped,
        "out": out,
    })
}

fn fresh_encoder(shape: &EncoderFlags, corpus: &Corpus) -> Result<EncoderState> {
    let config = EncoderConfig {
        d_model: shape.d_model,
        n_layers: shape.layers,
        n_heads: shape.heads,
        ffn_dim: shape.ffn_dim.unwrap_or(4 * shape.d_model),
        max_len: shape.positions,
        init_std: 1.0 / (shape.d_model as f64).sqrt(),
        ..EncoderConfig::default()
    };
    let vocab = Vocabulary::build(corpus.utterances().map(|u| u.text.as_str()), 1, None);
    EncoderState::init(config, vocab, shape.init_seed).map_err(|e| usage(e.to_string()))
}

fn pretrain(data: &DataDir, a: PretrainArgs) -> Result<Value> {
    let tasks = a.tasks.iter().map(|t| pretrain_task(t)).collect::<Result<Vec<_>>>()?;
    let plan = PretrainPlan::new(tasks, !a.no_mlm);
    if plan.is_empty() {
        return Err(usage("nothing to train: give --tasks or drop --no-mlm"));
    }
    let mut cfg = train_config(data, &a.train)?;
    if let Some(b) = a.train.batch_size {
        cfg.batch_size = b;
    }
    let corpus = load(data, &a.input)?;
    let init = match &a.encoder {
        Some(p) => EncoderState::load(data.input(p))?,
        None => fresh_encoder(&a.shape, &corpus)?,
    };
    let (encoder, record) = further_pretrain(&init, &plan, &corpus, &cfg, a.train.seed)?;
    encoder.save(&a.out)?;
    write_record(a.train.record.as_ref(), &record)?;
    let mut summary = run_summary("pretrain", &record, &a.out);
    summary["mlm"] = json!(plan.mlm);
    Ok(summary)
}

fn dataset(data: &DataDir, task: DownstreamTask, dir: &Path, name: Option<&str>) -> Result<DownstreamData> {
    let dir = data.input(dir);
    let name = name
        .map(str::to_string)
        .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| task.as_str().to_string());
    DownstreamData::load(&dir, task, name).with_context(|| format!("loading dataset {}", dir.display()))
}

fn finetune_cmd(data: &DataDir, a: FinetuneArgs) -> Result<Value> {
    let task = downstream_task(&a.task)?;
    let mut cfg = train_config(data, &a.train)?;
    if let Some(b) = a.train.batch_size {
        cfg.finetune_batch_size = Some(b);
    }
    if cfg.finetune_batch_size.is_none() {
        return Err(usage("fine-tuning needs a batch size: pass --batch-size or set finetune_batch_size"));
    }
    let ds = dataset(data, task, &a.data, a.dataset.as_deref())?;
    let base = EncoderState::load(data.input(&a.encoder))?;
    let (model, record) = finetune(&base, &ds, &cfg, a.train.seed)?;
    model.save(&a.out)?;
    write_record(a.train.record.as_ref(), &record)?;
    let mut summary = run_summary("finetune", &record, &a.out);
    summary["task"] = json!(task.as_str());
    summary["dataset"] = json!(ds.dataset);
    summary["learning_rate"] = json!(record.learning_rate);
    Ok(summary)
}

fn eval(data: &DataDir, a: EvalArgs) -> Result<Value> {
    let model = Model::load(data.input(&a.model))?;
    let ds = dataset(data, model.task(), &a.data, a.dataset.as_deref())?;
    let records = match a.split {
        EvalSplit::Valid => &ds.valid,
        EvalSplit::Test => &ds.test,
    };
    let report = evaluate(&model, &ds, records)?;
    if let Some(out) = &a.out {
        std::fs::write(out, report.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(json!({
        "command": "eval",
        "task": model.task().as_str(),
        "dataset": ds.dataset,
        "split": format!("{:?}", a.split).to_lowercase(),
        "examples": records.len(),
        "metrics": report.values,
    }))
}

fn matrix(data: &DataDir, a: MatrixArgs) -> Result<Value> {
    let spec = ExperimentSpec::load(&a.spec, data.0.as_deref())?;
    let out_dir = match (a.out, &spec.out_dir) {
        (Some(o), _) => o,
        (None, Some(o)) => o.clone(),
        (None, None) => bail!(UsageError("no results directory: pass --out or set out_dir in the spec".into())),
    };
    let opts = MatrixOptions {
        out_dir: out_dir.clone(),
        jobs: a.jobs,
        keep_models: a.keep_models,
    };
    let outcome = run_matrix(&spec, &opts)?;
    let report = match ResultStore::load(&out_dir).and_then(|store| emit_report(&store, &AffinityTable, &out_dir)) {
        Ok(files) => Some(files),
        Err(e) if outcome.cells.is_empty() => {
            log::warn!("no report: {e}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let summary = json!({
        "command": "matrix",
        "spec": spec.name,
        "out": out_dir,
        "cells": outcome.cells.len(),
        "cells_run": outcome.cells_run,
        "cells_reused": outcome.cells_reused,
        "pretrain_runs": outcome.pretrain_runs,
        "cache_hits": outcome.cache_hits,
        "training_steps": outcome.training_steps,
        "failures": outcome.failures,
        "report": report,
    });
    if !outcome.ok() {
        println!("{summary}");
        for f in &outcome.failures {
            eprintln!("cell {} failed: {}", f.cell_id, f.message);
        }
        let msg = format!("{} of {} cells failed", outcome.failures.len(), outcome.failures.len() + outcome.cells.len());
        if outcome.failures.iter().all(|f| f.data_error) {
            bail!(DataFailure(msg));
        }
        bail!(TrainingFailure(msg));
    }
    Ok(summary)
}

/// Every failed cell failed on its input data.
#[derive(Debug)]
struct DataFailure(String);

impl std::fmt::Display for DataFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataFailure {}

fn report(a: ReportArgs) -> Result<Value> {
    let store = ResultStore::load(&a.results)?;
    let out = a.out.unwrap_or_else(|| a.results.clone());
    let files = emit_report(&store, &AffinityTable, &out)?;
    Ok(json!({
        "command": "report",
        "results": a.results,
        "markdown": files.markdown,
        "csv": files.csv,
        "cells": files.cells,
        "missing": files.missing,
    }))
}
