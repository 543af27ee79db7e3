use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::affinity::{Ability, AffinityTable, Structure};
use super::matrix::{CellRecord, METRICS_FILE, SPEC_FILE};
use super::spec::ExperimentSpec;
use super::{read_json, write_atomic, ExperimentError};
use crate::metrics::{metric_names, MetricReport, ACC_OUT_NOTE};
use crate::task::{DownstreamTask, PretrainTask};

type Result<T> = std::result::Result<T, ExperimentError>;

pub const REPORT_MD: &str = "report.md";
pub const REPORT_CSV: &str = "report.csv";

/// Completed cells of a grid together with the spec that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultStore {
    pub spec: ExperimentSpec,
    pub cells: Vec<CellRecord>,
}

impl ResultStore {
    /// Reads `spec.json` and every `cells/*/metrics.json` under `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spec: ExperimentSpec = read_json(&dir.join(SPEC_FILE))?;
        let mut cells = Vec::new();
        let cells_dir = dir.join("cells");
        if cells_dir.is_dir() {
            let entries = std::fs::read_dir(&cells_dir).map_err(|source| ExperimentError::Io {
                path: cells_dir.display().to_string(),
                source,
            })?;
            let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
            paths.sort();
            for p in paths {
                let m = p.join(METRICS_FILE);
                if m.exists() {
                    cells.push(read_json(&m)?);
                }
            }
        }
        Ok(Self { spec, cells })
    }

    /// Seed-mean report of one (configuration, task, dataset) cell group.
    pub fn aggregate(&self, config: &str, task: DownstreamTask, dataset: &str) -> Option<MetricReport> {
        let reports: Vec<MetricReport> = self
            .cells
            .iter()
            .filter(|c| c.config == config && c.task == task && c.dataset == dataset)
            .map(|c| c.report.clone())
            .collect();
        MetricReport::aggregate(&reports)
    }
}

/// A table column: one metric of one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Column {
    task: DownstreamTask,
    dataset: String,
    metric: &'static str,
}

impl Column {
    fn header(&self) -> String {
        format!("{} {} {}", self.task, self.dataset, self.metric)
    }
}

/// Column blocks in the order of the published tables: acts and intents,
/// then responses and states.
const BLOCKS: [&[DownstreamTask]; 2] = [
    &[DownstreamTask::Da, DownstreamTask::Int],
    &[DownstreamTask::Rs, DownstreamTask::Dst],
];

fn columns(spec: &ExperimentSpec, tasks: &[DownstreamTask]) -> Vec<Column> {
    let mut out = Vec::new();
    for &task in tasks {
        for d in spec.downstream.iter().filter(|d| d.task == task) {
            for &metric in metric_names(task) {
                out.push(Column {
                    task,
                    dataset: d.dataset.clone(),
                    metric,
                });
            }
        }
    }
    out
}

fn value(store: &ResultStore, config: &str, col: &Column) -> Option<f64> {
    store.aggregate(config, col.task, &col.dataset)?.percent(col.metric)
}

fn render_table(out: &mut String, store: &ResultStore, rows: &[String], cols: &[Column]) {
    let values: Vec<Vec<Option<f64>>> = rows
        .iter()
        .map(|r| cols.iter().map(|c| value(store, r, c)).collect())
        .collect();
    // Compare at the printed precision so equal-looking cells tie.
    let rounded = |v: f64| (v * 100.0).round() / 100.0;
    let best: Vec<Option<f64>> = (0..cols.len())
        .map(|j| {
            values
                .iter()
                .filter_map(|row| row[j].map(rounded))
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        })
        .collect();
    out.push_str("| |");
    for c in cols {
        let _ = write!(out, " {} |", c.header());
    }
    out.push_str("\n|---|");
    for _ in cols {
        out.push_str("---:|");
    }
    out.push('\n');
    for (r, row) in rows.iter().zip(&values) {
        let _ = write!(out, "| {r} |");
        for (j, v) in row.iter().enumerate() {
            match v {
                Some(v) if Some(rounded(*v)) == best[j] && rows.len() > 1 => {
                    let _ = write!(out, " **{v:.2}** |");
                }
                Some(v) => {
                    let _ = write!(out, " {v:.2} |");
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
}

/// A pre-training task that beats the baseline on most metrics of a
/// downstream task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NicePair {
    pub pretrain: PretrainTask,
    pub downstream: DownstreamTask,
    pub config: String,
    pub improved: usize,
    pub compared: usize,
    /// Percentage-point change per column header.
    pub deltas: Vec<(String, f64)>,
    pub shared_abilities: BTreeSet<Ability>,
    pub shared_structures: BTreeSet<Structure>,
}

/// Every (single task + MLM configuration, downstream task) pair compared
/// against the baseline row; `nice` holds those clearing the threshold.
pub fn nice_pairs(store: &ResultStore, affinity: &AffinityTable) -> Result<Vec<NicePair>> {
    let baseline = &store.spec.report.baseline;
    if store.spec.config(baseline).is_none() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for config in &store.spec.pretrain {
        let plan = config.plan();
        if !plan.mlm || plan.tasks.len() != 1 || &config.name == baseline {
            continue;
        }
        let p = plan.tasks[0];
        for d in DownstreamTask::ALL {
            let mut deltas = Vec::new();
            for col in columns(&store.spec, &[d]) {
                if let (Some(a), Some(b)) = (value(store, &config.name, &col), value(store, baseline, &col)) {
                    deltas.push((col.header(), a - b));
                }
            }
            let improved = deltas.iter().filter(|(_, x)| *x > 0.0).count();
            let compared = deltas.len();
            if compared == 0 || improved as f64 <= store.spec.report.nice_fraction * compared as f64 {
                continue;
            }
            let (shared_abilities, shared_structures) = affinity.overlap(p, d)?;
            out.push(NicePair {
                pretrain: p,
                downstream: d,
                config: config.name.clone(),
                improved,
                compared,
                deltas,
                shared_abilities,
                shared_structures,
            });
        }
    }
    Ok(out)
}

fn join<T: std::fmt::Display>(xs: &BTreeSet<T>) -> String {
    if xs.is_empty() {
        "none".into()
    } else {
        xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
    }
}

pub fn render_markdown(store: &ResultStore, affinity: &AffinityTable) -> Result<String> {
    let spec = &store.spec;
    let mut out = String::new();
    let _ = writeln!(out, "# {}\n", spec.name);
    let _ = writeln!(
        out,
        "Values are test-set percentages averaged over seeds {:?}; best per column in bold. \
         A dash marks a missing cell.\n",
        spec.seeds
    );
    let mut tables: Vec<(String, Vec<String>)> = vec![(
        "All configurations".into(),
        spec.pretrain.iter().map(|p| p.name.clone()).collect(),
    )];
    tables.extend(spec.tables.iter().map(|t| (t.title.clone(), t.rows.clone())));
    for (title, rows) in &tables {
        let _ = writeln!(out, "## {title}\n");
        for block in BLOCKS {
            let cols = columns(spec, block);
            if cols.is_empty() {
                continue;
            }
            render_table(&mut out, store, rows, &cols);
            out.push('\n');
        }
    }
    if spec.downstream.iter().any(|d| d.task == DownstreamTask::Int) {
        let _ = writeln!(out, "{ACC_OUT_NOTE}\n");
    }

    let _ = writeln!(out, "## Nice pairs\n");
    let _ = writeln!(
        out,
        "A single-task configuration (with MLM) forms a nice pair with a downstream task when it beats \
         {} on more than {:.0}% of that task's metrics, using seed means.\n",
        spec.report.baseline,
        100.0 * spec.report.nice_fraction
    );
    let pairs = nice_pairs(store, affinity)?;
    if spec.config(&spec.report.baseline).is_none() {
        let _ = writeln!(out, "Baseline {} is not part of this grid.\n", spec.report.baseline);
    } else if pairs.is_empty() {
        out.push_str("None.\n\n");
    } else {
        out.push_str("| Pre-training | Downstream | Improved | Shared abilities | Shared structures |\n");
        out.push_str("|---|---|---:|---|---|\n");
        for p in &pairs {
            let _ = writeln!(
                out,
                "| {} | {} | {}/{} | {} | {} |",
                p.pretrain,
                p.downstream,
                p.improved,
                p.compared,
                join(&p.shared_abilities),
                join(&p.shared_structures)
            );
        }
        out.push('\n');
    }
    Ok(out)
}

/// One row per (configuration, dataset); metric columns span all tasks.
pub fn render_csv(store: &ResultStore) -> String {
    let all: Vec<&str> = [DownstreamTask::Da, DownstreamTask::Int, DownstreamTask::Rs, DownstreamTask::Dst]
        .iter()
        .flat_map(|t| metric_names(*t).iter().copied())
        .collect();
    let mut out = String::from("config,task,dataset");
    for m in &all {
        let _ = write!(out, ",{m}");
    }
    out.push('\n');
    for p in &store.spec.pretrain {
        for d in &store.spec.downstream {
            let agg = store.aggregate(&p.name, d.task, &d.dataset);
            let _ = write!(out, "{},{},{}", p.name, d.task, d.dataset);
            for m in &all {
                out.push(',');
                if let Some(v) = agg.as_ref().and_then(|a| a.percent(m)) {
                    let _ = write!(out, "{v:.2}");
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Paths of the written report files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub markdown: PathBuf,
    pub csv: PathBuf,
    pub cells: usize,
    pub missing: usize,
}

/// Writes `report.md` and `report.csv` into `out_dir`.
pub fn emit_report(store: &ResultStore, affinity: &AffinityTable, out_dir: impl AsRef<Path>) -> Result<ReportFiles> {
    if store.cells.is_empty() {
        return Err(ExperimentError::Spec("no completed cells to report".into()));
    }
    let out_dir = out_dir.as_ref();
    let markdown = out_dir.join(REPORT_MD);
    let csv = out_dir.join(REPORT_CSV);
    write_atomic(&markdown, render_markdown(store, affinity)?.as_bytes())?;
    write_atomic(&csv, render_csv(store).as_bytes())?;
    let expected: BTreeMap<_, _> = store
        .spec
        .pretrain
        .iter()
        .flat_map(|p| {
            store.spec.downstream.iter().flat_map(move |d| {
                store.spec.seeds.iter().map(move |s| ((p.name.clone(), d.task, d.dataset.clone(), *s), ()))
            })
        })
        .collect();
    let present = store
        .cells
        .iter()
        .filter(|c| expected.contains_key(&(c.config.clone(), c.task, c.dataset.clone(), c.seed)))
        .count();
    Ok(ReportFiles {
        markdown,
        csv,
        cells: present,
        missing: expected.len() - present,
    })
}
