use std::collections::BTreeSet;

use todpt::experiments::{
    emit_report, render_markdown, run_matrix, AffinityTable, ExperimentSpec, MatrixOptions, ResultStore, REPORT_CSV,
    REPORT_MD,
};

const SPEC: &str = r#"
name = "two by two"
seeds = [1]

[encoder]
d_model = 16
ffn_dim = 32
max_len = 64

[corpus]
synthetic = { dialogues = 40, seed = 3 }

[train]
learning_rate = 0.001
batch_size = 4
finetune_batch_size = 4
max_len = 64
max_valid_examples = 8
rs_negatives = 3
crm_negatives = 3

[further_pretrain]
max_steps = 4

[finetune]
max_steps = 4

[[pretrain]]
name = "BERT²"
mlm = false

[[pretrain]]
name = "CRM"
tasks = ["crm"]

[[downstream]]
task = "int"
dataset = "SimINT"
synthetic = { train = 8, valid = 4, test = 6, seed = 1 }

[[downstream]]
task = "rs"
dataset = "SimRS"
synthetic = { train = 8, valid = 4, test = 4, seed = 2 }

[[tables]]
title = "Response matching"
rows = ["BERT²", "CRM"]
"#;

fn opts(dir: &std::path::Path) -> MatrixOptions {
    MatrixOptions {
        out_dir: dir.to_path_buf(),
        jobs: 1,
        keep_models: false,
    }
}

#[test]
fn matrix_runs_every_cell_then_resumes_from_cache() {
    let spec = ExperimentSpec::from_toml(SPEC).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = run_matrix(&spec, &opts(dir.path())).unwrap();
    assert!(first.ok(), "{:?}", first.failures);
    assert_eq!(first.cells.len(), 4);
    assert_eq!(first.cells_run, 4);
    assert_eq!(first.pretrain_runs, 1);
    assert!(first.training_steps > 0);
    let ids: BTreeSet<&str> = first.cells.iter().map(|c| c.cell_id.as_str()).collect();
    assert_eq!(ids.len(), 4);

    let again = run_matrix(&spec, &opts(dir.path())).unwrap();
    assert_eq!(again.training_steps, 0);
    assert_eq!(again.cells_reused, 4);
    assert_eq!(again.pretrain_runs, 0);
    for (a, b) in first.cells.iter().zip(&again.cells) {
        assert_eq!(a.report, b.report);
    }

    let store = ResultStore::load(dir.path()).unwrap();
    let files = emit_report(&store, &AffinityTable, dir.path()).unwrap();
    assert!(dir.path().join(REPORT_MD).exists() && dir.path().join(REPORT_CSV).exists());
    let md = std::fs::read_to_string(files.markdown).unwrap();
    assert!(md.contains("## Response matching"));
    assert!(md.contains("| CRM |"));
}

#[test]
fn single_cell_report_has_one_row() {
    let one = SPEC
        .replace("[[pretrain]]\nname = \"CRM\"\ntasks = [\"crm\"]\n", "")
        .replace("rows = [\"BERT²\", \"CRM\"]", "rows = [\"BERT²\"]");
    let one = one.split("[[downstream]]\ntask = \"rs\"").next().unwrap().to_string()
        + "[[tables]]\ntitle = \"Baseline\"\nrows = [\"BERT²\"]\n";
    let spec = ExperimentSpec::from_toml(&one).unwrap();
    assert_eq!((spec.pretrain.len(), spec.downstream.len()), (1, 1));
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_matrix(&spec, &opts(dir.path())).unwrap();
    assert_eq!(outcome.cells.len(), 1);
    let md = render_markdown(&ResultStore::load(dir.path()).unwrap(), &AffinityTable).unwrap();
    let rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| BERT² |")).collect();
    // One row in the overall table and one in the titled table.
    assert_eq!(rows.len(), 2);
    assert!(md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| |") && !l.starts_with("|---")).all(|l| l.starts_with("| BERT² |")));
}

#[test]
fn pre_training_data_failures_are_flagged_per_cell() {
    // Two dialogues split 0.9/0.05/0.05 leave no negative pool for CRM.
    let tiny = SPEC.replace("dialogues = 40", "dialogues = 2");
    let spec = ExperimentSpec::from_toml(&tiny).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_matrix(&spec, &opts(dir.path())).unwrap();
    assert!(!outcome.ok());
    assert!(outcome.failures.iter().all(|f| f.data_error), "{:?}", outcome.failures);
}

#[test]
fn shipped_grid_configs_load() {
    let configs = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (file, datasets, seeds) in [("acceptance_grid.toml", 4, 1), ("full_grid.toml", 8, 3)] {
        let spec = ExperimentSpec::load(configs.join(file), None).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.pretrain.len(), 9, "{file}");
        assert_eq!((spec.downstream.len(), spec.seeds.len()), (datasets, seeds), "{file}");
        assert_eq!(spec.tables.len(), 6, "{file}");
    }
}
