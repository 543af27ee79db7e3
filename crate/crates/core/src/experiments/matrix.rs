use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::spec::{build_vocabulary, slug, ExperimentSpec, PretrainConfig};
use super::{read_json, write_json_atomic, ExperimentError};
use crate::corpus::Corpus;
use crate::encoder::{EncoderConfig, Vocabulary};
use crate::metrics::MetricReport;
use crate::model::EncoderState;
use crate::task::{DownstreamTask, PretrainTask};
use crate::trainer::{evaluate, finetune, further_pretrain, DownstreamData, TrainConfig};

type Result<T> = std::result::Result<T, ExperimentError>;

pub const SPEC_FILE: &str = "spec.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const RUN_FILE: &str = "run.json";
pub const ENCODER_FILE: &str = "encoder.json";
pub const MODEL_FILE: &str = "model.json";
pub const ERROR_FILE: &str = "error.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixOptions {
    pub out_dir: PathBuf,
    /// Worker threads; 0 picks the number of cores.
    pub jobs: usize,
    /// Also store every fine-tuned model.
    pub keep_models: bool,
}

/// Result of one (configuration, dataset, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell_id: String,
    pub config: String,
    pub tasks: Vec<PretrainTask>,
    pub mlm: bool,
    pub task: DownstreamTask,
    pub dataset: String,
    pub seed: u64,
    /// Cache key of the pre-trained encoder the cell started from.
    pub checkpoint: String,
    pub finetune_steps: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell_id: String,
    pub message: String,
    pub data_error: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixOutcome {
    pub cells: Vec<CellRecord>,
    pub failures: Vec<CellFailure>,
    /// Pre-training checkpoints produced by this invocation.
    pub pretrain_runs: usize,
    /// Pre-training checkpoints found in the cache.
    pub cache_hits: usize,
    /// Cells computed by this invocation.
    pub cells_run: usize,
    /// Cells whose results already existed.
    pub cells_reused: usize,
    /// Optimizer steps taken by this invocation, pre-training included.
    pub training_steps: usize,
}

impl MatrixOutcome {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn cell_id(config: &PretrainConfig, task: DownstreamTask, dataset: &str, seed: u64) -> String {
    format!("{}__{}__{}__s{seed}", config.slug(), task.as_str().to_lowercase(), slug(dataset))
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    tasks: &'a [PretrainTask],
    mlm: bool,
    corpus: String,
    train: &'a TrainConfig,
    encoder: &'a EncoderConfig,
    encoder_seed: u64,
    vocabulary: String,
    seed: u64,
}

/// Cache key of a pre-trained encoder. Two configurations share a key only
/// when the objectives, corpus contents, training settings, base encoder
/// and seed all coincide.
#[allow(clippy::too_many_arguments)]
pub fn checkpoint_key(
    config: &PretrainConfig,
    corpus: &Corpus,
    train: &TrainConfig,
    encoder: &EncoderConfig,
    encoder_seed: u64,
    vocab: &Vocabulary,
    seed: u64,
) -> String {
    let plan = config.plan();
    let material = KeyMaterial {
        tasks: &plan.tasks,
        mlm: plan.mlm,
        corpus: corpus.content_hash(),
        train,
        encoder,
        encoder_seed,
        vocabulary: hex::encode(Sha256::digest(vocab.tokens().join("\n").as_bytes())),
        seed,
    };
    let json = serde_json::to_string(&material).expect("key material serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

struct Pretrained {
    config: usize,
    key: String,
    /// On failure: the message and whether the input data was at fault.
    state: std::result::Result<EncoderState, (String, bool)>,
}

fn pretrain_or_load(
    spec: &ExperimentSpec,
    config: &PretrainConfig,
    corpus: &Corpus,
    base: &EncoderState,
    dir: &Path,
    steps: &AtomicUsize,
) -> Result<(EncoderState, bool)> {
    let path = dir.join(ENCODER_FILE);
    if path.exists() {
        log::info!("{}: reusing cached checkpoint {}", config.name, dir.display());
        return Ok((EncoderState::load(&path)?, true));
    }
    let plan = config.plan();
    let state = if plan.is_empty() {
        base.clone()
    } else {
        log::info!("{}: further pre-training {plan}", config.name);
        let cfg = spec.pretrain_config(config)?;
        let (state, record) = further_pretrain(base, &plan, corpus, &cfg, spec.pretrain_seed())?;
        steps.fetch_add(record.steps.len(), Ordering::Relaxed);
        write_json_atomic(&dir.join(RUN_FILE), &record)?;
        state
    };
    state.save(&path)?;
    Ok((state, false))
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    config: &PretrainConfig,
    key: &str,
    state: &EncoderState,
    data: &DownstreamData,
    seed: u64,
    cfg: &TrainConfig,
    opts: &MatrixOptions,
    steps: &AtomicUsize,
) -> Result<CellRecord> {
    let id = cell_id(config, data.task, &data.dataset, seed);
    let dir = opts.out_dir.join("cells").join(&id);
    log::info!("{}: fine-tuning", id);
    let (model, record) = finetune(state, data, cfg, seed)?;
    steps.fetch_add(record.steps.len(), Ordering::Relaxed);
    let report = evaluate(&model, data, &data.test)?;
    let plan = config.plan();
    let cell = CellRecord {
        cell_id: id,
        config: config.name.clone(),
        tasks: plan.tasks,
        mlm: plan.mlm,
        task: data.task,
        dataset: data.dataset.clone(),
        seed,
        checkpoint: key.to_string(),
        finetune_steps: record.stopped_step,
        report,
    };
    write_json_atomic(&dir.join(RUN_FILE), &record)?;
    if opts.keep_models {
        model.save(dir.join(MODEL_FILE))?;
    }
    // Written last: its presence marks the cell complete.
    write_json_atomic(&dir.join(METRICS_FILE), &cell)?;
    let _ = std::fs::remove_file(dir.join(ERROR_FILE));
    Ok(cell)
}

/// Runs every (configuration × dataset × seed) cell of `spec`.
///
/// Pre-trained encoders are cached under `checkpoints/{key}` and cells under
/// `cells/{id}`; completed cells are skipped on rerun. A failing cell is
/// recorded and the grid continues.
pub fn run_matrix(spec: &ExperimentSpec, opts: &MatrixOptions) -> Result<MatrixOutcome> {
    spec.validate()?;
    let corpus = spec.load_corpus()?;
    let data: Vec<DownstreamData> = spec
        .downstream
        .iter()
        .map(|d| spec.load_downstream(d))
        .collect::<Result<_>>()?;
    let vocab = build_vocabulary(&corpus, &data, &spec.encoder);
    let base = EncoderState::init(spec.encoder.config.clone(), vocab.clone(), spec.encoder.seed)?;
    let ft_cfg = spec.finetune_config()?;
    std::fs::create_dir_all(&opts.out_dir).map_err(|source| ExperimentError::Io {
        path: opts.out_dir.display().to_string(),
        source,
    })?;
    write_json_atomic(&opts.out_dir.join(SPEC_FILE), spec)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| ExperimentError::Spec(format!("thread pool: {e}")))?;
    let steps = AtomicUsize::new(0);
    let mut outcome = MatrixOutcome::default();

    let pretrained: Vec<(Pretrained, bool)> = pool.install(|| {
        spec.pretrain
            .par_iter()
            .enumerate()
            .map(|(i, config)| {
                let key = spec
                    .pretrain_config(config)
                    .map(|cfg| {
                        checkpoint_key(
                            config,
                            &corpus,
                            &cfg,
                            &spec.encoder.config,
                            spec.encoder.seed,
                            &vocab,
                            spec.pretrain_seed(),
                        )
                    })
                    .unwrap_or_default();
                let dir = opts.out_dir.join("checkpoints").join(&key);
                match pretrain_or_load(spec, config, &corpus, &base, &dir, &steps) {
                    Ok((state, hit)) => (
                        Pretrained {
                            config: i,
                            key,
                            state: Ok(state),
                        },
                        hit,
                    ),
                    Err(e) => (
                        Pretrained {
                            config: i,
                            key,
                            state: Err((e.to_string(), e.is_data_error())),
                        },
                        false,
                    ),
                }
            })
            .collect()
    });

    struct Job<'a> {
        pre: &'a Pretrained,
        data: &'a DownstreamData,
        seed: u64,
    }
    let mut jobs = Vec::new();
    for (pre, hit) in &pretrained {
        let config = &spec.pretrain[pre.config];
        match &pre.state {
            Ok(_) if *hit => outcome.cache_hits += 1,
            Ok(_) if !config.plan().is_empty() => outcome.pretrain_runs += 1,
            _ => {}
        }
        for d in &data {
            for &seed in &spec.seeds {
                let id = cell_id(config, d.task, &d.dataset, seed);
                let metrics = opts.out_dir.join("cells").join(&id).join(METRICS_FILE);
                if let Ok(cell) = read_json::<CellRecord>(&metrics) {
                    outcome.cells.push(cell);
                    outcome.cells_reused += 1;
                    continue;
                }
                if let Err((message, data_error)) = &pre.state {
                    outcome.failures.push(CellFailure {
                        cell_id: id,
                        message: format!("pre-training failed: {message}"),
                        data_error: *data_error,
                    });
                    continue;
                }
                jobs.push(Job { pre, data: d, seed });
            }
        }
    }

    let results: Vec<(String, Result<CellRecord>)> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let config = &spec.pretrain[job.pre.config];
                let id = cell_id(config, job.data.task, &job.data.dataset, job.seed);
                let state = job.pre.state.as_ref().expect("only successful checkpoints are scheduled");
                let r = run_cell(config, &job.pre.key, state, job.data, job.seed, &ft_cfg, opts, &steps);
                (id, r)
            })
            .collect()
    });
    for (id, r) in results {
        match r {
            Ok(cell) => {
                outcome.cells.push(cell);
                outcome.cells_run += 1;
            }
            Err(e) => {
                log::error!("{id}: {e}");
                let dir = opts.out_dir.join("cells").join(&id);
                let _ = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join(ERROR_FILE), e.to_string()));
                outcome.failures.push(CellFailure {
                    cell_id: id,
                    message: e.to_string(),
                    data_error: e.is_data_error(),
                });
            }
        }
    }
    outcome.cells.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    outcome.training_steps = steps.into_inner();
    Ok(outcome)
}
