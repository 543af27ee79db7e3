//! `todpt`: corpus preparation, task-level further pre-training,
//! fine-tuning, evaluation and experiment grids from the command line.
//!
//! Every successful command prints one JSON summary on stdout. Errors go to
//! stderr. Exit status: 0 success, 1 usage error, 2 data error, 3 training
//! failure.

mod commands;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "todpt", version, about = "Task-level further pre-training for task-oriented dialogue")]
struct Cli {
    /// Base directory for relative input data paths (corpora, dataset
    /// directories, data paths inside grid specs). Outputs stay relative to
    /// the working directory.
    #[arg(long, global = true, env = "TODPT_DATA_DIR")]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a dialogue corpus and write it as canonical JSONL.
    Ingest(IngestArgs),
    /// Count entity mentions per utterance with the rule-based annotator.
    Annotate(AnnotateArgs),
    /// Generate self-supervised examples for one pre-training task.
    Gen(GenArgs),
    /// Further pre-train an encoder on a corpus.
    Pretrain(PretrainArgs),
    /// Fine-tune an encoder on a downstream dataset.
    Finetune(FinetuneArgs),
    /// Score a fine-tuned model on a dataset split.
    Eval(EvalArgs),
    /// Run a grid of pre-training configurations and downstream datasets.
    Matrix(MatrixArgs),
    /// Render report.md and report.csv from a results directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InputFormat {
    /// One dialogue object per line.
    Jsonl,
    /// MultiWOZ data.json layout.
    Multiwoz,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Input corpus file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Input layout.
    #[arg(long, value_enum, default_value = "jsonl")]
    format: InputFormat,
    /// Corpus name; defaults to the input file stem.
    #[arg(long)]
    name: Option<String>,
    /// Output JSONL file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    /// Input corpus (JSONL).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output corpus with entity counts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Pre-training task: mlm, dsp, crm, dcv, enp or dur.
    #[arg(long)]
    task: String,
    /// Input corpus (JSONL).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output examples (JSONL).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// DUR window size.
    #[arg(long, default_value_t = 3)]
    window: usize,
    /// CRM negatives per example.
    #[arg(long, default_value_t = 9)]
    negatives: usize,
    /// DCV fraction of dialogues to corrupt.
    #[arg(long, default_value_t = 0.5)]
    corrupt_fraction: f64,
    /// DCV per-utterance replacement probability.
    #[arg(long, default_value_t = 0.3)]
    replace_prob: f64,
    /// ENP largest count class.
    #[arg(long, default_value_t = 10)]
    max_count: usize,
    /// MLM fraction of maskable tokens.
    #[arg(long, default_value_t = 0.15)]
    mask_rate: f64,
    /// MLM sequence length cap.
    #[arg(long, default_value_t = 512)]
    max_len: usize,
    /// MLM: take the vocabulary from this encoder checkpoint instead of
    /// building one from the corpus.
    #[arg(long)]
    vocab_from: Option<PathBuf>,
}

/// Training options shared by `pretrain` and `finetune`. Flags override
/// values from `--config`, which override built-in defaults.
#[derive(Debug, Args)]
struct TrainFlags {
    /// TOML file with training settings (keys of the training config).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    /// Learning rate for state tracking fine-tuning.
    #[arg(long)]
    dst_lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Steps between validation rounds.
    #[arg(long)]
    eval_every: Option<usize>,
    /// Validation rounds without improvement before stopping.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the run record (loss traces, validation) here.
    #[arg(long)]
    record: Option<PathBuf>,
}

/// Shape of a freshly initialized encoder.
#[derive(Debug, Args)]
struct EncoderFlags {
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Feed-forward width; defaults to 4 x d_model.
    #[arg(long)]
    ffn_dim: Option<usize>,
    /// Position table size of a fresh encoder.
    #[arg(long, default_value_t = 512)]
    positions: usize,
    /// Seed of the fresh initialization.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    /// Corpus (JSONL); ENP needs an annotated corpus.
    #[arg(long = "in")]
    input: PathBuf,
    /// Comma-separated task-level objectives: dsp, crm, dcv, enp, dur.
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
    /// Leave MLM out of further pre-training.
    #[arg(long)]
    no_mlm: bool,
    /// Starting checkpoint; a fresh encoder is initialized when absent.
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[command(flatten)]
    shape: EncoderFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Output encoder checkpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    /// Downstream task: int, da, rs or dst.
    #[arg(long)]
    task: String,
    /// Dataset directory with train/valid/test.jsonl (and ontology.json).
    #[arg(long)]
    data: PathBuf,
    /// Dataset name; defaults to the directory name.
    #[arg(long)]
    dataset: Option<String>,
    /// Encoder checkpoint to start from.
    #[arg(long)]
    encoder: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
    /// Output model checkpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EvalSplit {
    Valid,
    Test,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Fine-tuned model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory with train/valid/test.jsonl (and ontology.json).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, value_enum, default_value = "test")]
    split: EvalSplit,
    /// Also write the metric report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MatrixArgs {
    /// Grid spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Results directory; overrides the spec's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel cell workers; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Keep every fine-tuned model next to its metrics.
    #[arg(long)]
    keep_models: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Results directory written by `matrix`.
    #[arg(long)]
    results: PathBuf,
    /// Where to write the report; defaults to the results directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Invalid option values detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Failure of a whole command that is neither a usage nor a data problem.
#[derive(Debug)]
pub struct TrainingFailure(pub String);

impl fmt::Display for TrainingFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for TrainingFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use todpt::experiments::ExperimentError;
    use todpt::trainer::TrainError;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<TrainingFailure>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return if e.is_data_error() { 2 } else { 3 };
        }
        if let Some(e) = cause.downcast_ref::<ExperimentError>() {
            return if e.is_data_error() { 2 } else { 3 };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
