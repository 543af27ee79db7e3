use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::corpus::{annotate_entities, load_corpus, Corpus, RuleBasedAnnotator, Split};
use crate::encoder::{EncoderConfig, Vocabulary};
use crate::synthetic::{self, SplitSizes};
use crate::task::{DownstreamTask, PretrainTask};
use crate::trainer::{DownstreamData, PretrainPlan, TrainConfig};

type Result<T> = std::result::Result<T, ExperimentError>;

/// Base encoder and vocabulary settings shared by every configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSection {
    #[serde(flatten)]
    pub config: EncoderConfig,
    /// Seed of the base initialization that every configuration starts from.
    pub seed: u64,
    pub min_count: usize,
    pub max_vocab: Option<usize>,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            config: EncoderConfig::default(),
            seed: 0,
            min_count: 1,
            max_vocab: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub dialogues: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Pre-training corpus: a JSONL file or simulated dialogues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticCorpus>,
    /// Run the fallback entity annotator when the file lacks counts.
    #[serde(default = "default_true")]
    pub annotate: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    #[serde(default)]
    pub seed: u64,
}

/// One downstream dataset: a directory of split files or simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownstreamSource {
    pub task: DownstreamTask,
    pub dataset: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticDataset>,
    #[serde(default)]
    pub oos_label: Option<String>,
}

/// A row of the study: which objectives further pre-train the base encoder.
/// No tasks with `mlm = false` is the two-stage baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub name: String,
    #[serde(default)]
    pub tasks: Vec<PretrainTask>,
    #[serde(default = "default_true")]
    pub mlm: bool,
    /// Overrides of the shared `[train]` table for this configuration.
    #[serde(default)]
    pub train: toml::Table,
}

impl PretrainConfig {
    pub fn plan(&self) -> PretrainPlan {
        PretrainPlan::new(self.tasks.iter().copied(), self.mlm)
    }

    /// File-system friendly identifier derived from the display name.
    pub fn slug(&self) -> String {
        slug(&self.name)
    }
}

pub(crate) fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        let mapped = match c {
            '²' => '2',
            '³' => '3',
            c if c.is_ascii_alphanumeric() => c.to_ascii_lowercase(),
            _ => '-',
        };
        if mapped == '-' && (out.is_empty() || out.ends_with('-')) {
            continue;
        }
        out.push(mapped);
    }
    out.trim_end_matches('-').to_string()
}

/// A comparison table of the report: a title and the configurations it
/// compares, in row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub title: String,
    pub rows: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportSettings {
    /// Configuration every single-task row is compared against.
    pub baseline: String,
    /// A pair is nice when it beats the baseline on more than this fraction
    /// of the downstream task's metrics.
    pub nice_fraction: f64,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self {
            baseline: "MLM³".into(),
            nice_fraction: 0.5,
        }
    }
}

/// A declarative grid of pre-training configurations × downstream datasets
/// × seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Fine-tuning seeds; pre-training uses the first.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub encoder: EncoderSection,
    pub corpus: CorpusSource,
    /// Shared training settings (keys of the training config).
    #[serde(default)]
    pub train: toml::Table,
    /// Further pre-training overrides applied on top of `[train]`.
    #[serde(default)]
    pub further_pretrain: toml::Table,
    /// Fine-tuning overrides applied on top of `[train]`.
    #[serde(default)]
    pub finetune: toml::Table,
    pub pretrain: Vec<PretrainConfig>,
    pub downstream: Vec<DownstreamSource>,
    #[serde(default)]
    pub tables: Vec<TableSpec>,
    #[serde(default)]
    pub report: ReportSettings,
}

fn merged(layers: &[&toml::Table]) -> Result<TrainConfig> {
    let mut table = toml::Table::new();
    for layer in layers {
        for (k, v) in layer.iter() {
            table.insert(k.clone(), v.clone());
        }
    }
    let cfg: TrainConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ExperimentError::Spec(format!("train settings: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| ExperimentError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Loads a spec; relative data paths resolve against `data_dir` when
    /// given, else against the spec file's directory.
    pub fn load(path: impl AsRef<Path>, data_dir: Option<&Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut spec = Self::from_toml(&text)?;
        let base = data_dir
            .map(Path::to_path_buf)
            .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
        spec.resolve_paths(&base);
        Ok(spec)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.corpus.path);
        for d in &mut self.downstream {
            fix(&mut d.path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Spec(m));
        if self.pretrain.is_empty() {
            return bad("at least one pretrain configuration is required".into());
        }
        if self.downstream.is_empty() {
            return bad("at least one downstream dataset is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.corpus.path.is_some() == self.corpus.synthetic.is_some() {
            return bad("corpus needs exactly one of `path` or `synthetic`".into());
        }
        self.encoder.config.validate()?;
        let mut slugs = BTreeSet::new();
        for p in &self.pretrain {
            let s = p.slug();
            if s.is_empty() || !slugs.insert(s.clone()) {
                return bad(format!("pretrain name {:?} is empty or collides with another", p.name));
            }
            if p.tasks.contains(&PretrainTask::Mlm) {
                return bad(format!("{}: MLM is controlled by `mlm`, not `tasks`", p.name));
            }
            self.pretrain_config(p)?;
        }
        let mut seen = BTreeSet::new();
        for d in &self.downstream {
            if d.path.is_some() == d.synthetic.is_some() {
                return bad(format!("{}: needs exactly one of `path` or `synthetic`", d.dataset));
            }
            if slug(&d.dataset).is_empty() || !seen.insert((d.task, slug(&d.dataset))) {
                return bad(format!("{} {}: duplicate or empty dataset name", d.task, d.dataset));
            }
        }
        let ft = self.finetune_config()?;
        if ft.finetune_batch_size.is_none() {
            return bad("finetune_batch_size must be set in [train] or [finetune]".into());
        }
        let names: BTreeSet<&str> = self.pretrain.iter().map(|p| p.name.as_str()).collect();
        for t in &self.tables {
            for r in &t.rows {
                if !names.contains(r.as_str()) {
                    return bad(format!("table {:?} lists unknown configuration {r:?}", t.title));
                }
            }
        }
        if !(0.0..1.0).contains(&self.report.nice_fraction) {
            return bad("report.nice_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Training settings of one pre-training configuration: `[train]`,
    /// then `[further_pretrain]`, then the configuration's own `train`.
    pub fn pretrain_config(&self, p: &PretrainConfig) -> Result<TrainConfig> {
        merged(&[&self.train, &self.further_pretrain, &p.train])
    }

    pub fn finetune_config(&self) -> Result<TrainConfig> {
        merged(&[&self.train, &self.finetune])
    }

    pub fn pretrain_seed(&self) -> u64 {
        self.seeds[0]
    }

    pub fn config(&self, name: &str) -> Option<&PretrainConfig> {
        self.pretrain.iter().find(|p| p.name == name)
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        if let Some(s) = self.corpus.synthetic {
            return Ok(synthetic::pretrain_corpus(&format!("{}-corpus", slug(&self.name)), s.dialogues, s.seed));
        }
        let path = self.corpus.path.as_ref().expect("validated");
        let corpus = load_corpus(path, Split::Train)?;
        if self.corpus.annotate && !corpus.is_annotated() {
            return Ok(annotate_entities(&corpus, &RuleBasedAnnotator)?);
        }
        Ok(corpus)
    }

    pub fn load_downstream(&self, d: &DownstreamSource) -> Result<DownstreamData> {
        let mut data = match (&d.path, d.synthetic) {
            (Some(path), _) => DownstreamData::load(path, d.task, &d.dataset)?,
            (None, Some(s)) => synthetic::downstream(
                d.task,
                &d.dataset,
                SplitSizes {
                    train: s.train,
                    valid: s.valid,
                    test: s.test,
                },
                s.seed,
            ),
            (None, None) => unreachable!("validated"),
        };
        if let Some(l) = &d.oos_label {
            data.oos_label = l.clone();
        }
        Ok(data)
    }
}

/// Vocabulary over the pre-training corpus and the train/valid splits of
/// every downstream dataset. Test text is left out.
pub fn build_vocabulary(corpus: &Corpus, data: &[DownstreamData], section: &EncoderSection) -> Vocabulary {
    use crate::corpus::downstream::DownstreamRecords as R;
    let mut texts: Vec<String> = corpus.utterances().map(|u| u.text.clone()).collect();
    for d in data {
        for split in [&d.train, &d.valid] {
            match split {
                R::Int(v) => texts.extend(v.iter().map(|r| r.text.clone())),
                R::Da(v) => texts.extend(v.iter().flat_map(|r| r.turns.iter().map(|u| u.text.clone()))),
                R::Rs(v) => {
                    for r in v {
                        texts.extend(r.context.iter().map(|u| u.text.clone()));
                        texts.push(r.response.clone());
                    }
                }
                R::Dst(v) => texts.extend(v.iter().flat_map(|r| r.turns.iter().map(|u| u.text.clone()))),
            }
        }
        if let Some(ont) = &d.ontology {
            texts.extend(ont.values().flatten().cloned());
        }
    }
    Vocabulary::build(texts.iter().map(String::as_str), section.min_count, section.max_vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"
name = "tiny"
seeds = [1, 2]

[encoder]
d_model = 16
ffn_dim = 32
max_len = 64

[corpus]
synthetic = { dialogues = 20, seed = 3 }

[train]
learning_rate = 0.001
batch_size = 4
finetune_batch_size = 4

[further_pretrain]
max_steps = 5

[finetune]
max_steps = 7

[[pretrain]]
name = "BERT²"
mlm = false

[[pretrain]]
name = "MLM³"

[[pretrain]]
name = "w.o. mlm"
tasks = ["crm"]
mlm = false
train = { max_steps = 3 }

[[downstream]]
task = "int"
dataset = "OOS"
synthetic = { train = 8, valid = 4, test = 4 }

[[tables]]
title = "baselines"
rows = ["BERT²", "MLM³"]
"#;

    #[test]
    fn parses_and_layers_train_settings() {
        let spec = ExperimentSpec::from_toml(SPEC).unwrap();
        assert_eq!(spec.encoder.config.d_model, 16);
        assert_eq!(spec.encoder.config.n_layers, 2);
        let wo = spec.config("w.o. mlm").unwrap();
        assert_eq!(wo.slug(), "w-o-mlm");
        assert!(!wo.plan().mlm);
        assert_eq!(spec.pretrain_config(wo).unwrap().max_steps, 3);
        assert_eq!(spec.pretrain_config(&spec.pretrain[1]).unwrap().max_steps, 5);
        let ft = spec.finetune_config().unwrap();
        assert_eq!((ft.max_steps, ft.learning_rate), (7, 0.001));
        assert_eq!(spec.pretrain[0].slug(), "bert2");
        assert!(spec.pretrain[0].plan().is_empty());
    }

    #[test]
    fn rejects_unknown_rows_and_missing_batch_size() {
        let bad = SPEC.replace(r#"rows = ["BERT²", "MLM³"]"#, r#"rows = ["XYZ"]"#);
        assert!(ExperimentSpec::from_toml(&bad).is_err());
        let bad = SPEC.replace("finetune_batch_size = 4\n", "");
        assert!(ExperimentSpec::from_toml(&bad).is_err());
        let bad = SPEC.replace("learning_rate = 0.001", "learning_rate = -1.0");
        assert!(ExperimentSpec::from_toml(&bad).is_err());
    }
}
