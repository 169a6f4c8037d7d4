use std::fs;
use std::path::Path;

use dzgt_core::harness::{self, run_file_name, ExperimentSpec, RUN_CSV_HEADER};

const SMALL: &str = r#"
[network]
topology = ["ring", "sparse", "complete"]
m = [1, 4]

[algorithm]
gamma = [1e-3, 1e-4]
epochs = 6
repeats = 2
seed = 11
eval_inner_budget = 50
eval_samples = 20
"#;

fn spec_in(dir: &Path, text: &str) -> ExperimentSpec {
    let mut spec = harness::validate_config(text).unwrap();
    spec.output_dir = dir.to_path_buf();
    spec
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("runs")] {
        for e in fs::read_dir(&sub).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn repeated_sweeps_write_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut sa = spec_in(a.path(), SMALL);
    sa.parallel = 1;
    let sb = spec_in(b.path(), SMALL);
    harness::run_experiment(&sa).unwrap();
    harness::run_experiment(&sb).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    // 12 combinations x 2 repeats, plus the two summaries.
    assert_eq!(ta.len(), 26);
    assert_eq!(ta, tb);
}

#[test]
fn sweep_layout_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec_in(dir.path(), SMALL);
    let table = harness::run_experiment(&spec).unwrap();
    assert_eq!(table.rows.len(), 12);
    assert_eq!(table.failures(), 0);

    let name = run_file_name("sparse", 4, 1e-4, 1);
    assert_eq!(name, "sparse_m4_g0.0001_r1.csv");
    let csv = fs::read_to_string(dir.path().join("runs").join(&name)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), RUN_CSV_HEADER);
    assert_eq!(lines.count(), 7);

    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 13);
    assert!(summary.lines().skip(1).all(|l| l.ends_with(",ok")));
    let md = fs::read_to_string(dir.path().join("summary.md")).unwrap();
    assert!(md.contains("| Setting | Ring graph | Sparse graph | Complete graph |"));
    assert!(md.contains("| m = 4 |"));

    for row in &table.rows {
        assert_eq!(row.seeds.len(), 2);
        if row.m == 1 {
            assert!(row.seeds.iter().all(|s| s.final_consensus == 0.0));
        }
    }
}

#[test]
fn topologies_share_random_numbers() {
    // Same (m, repeat) means the same run seed and starting center, so the
    // epoch-0 objective cannot depend on the graph or the step size.
    let dir = tempfile::tempdir().unwrap();
    let table = harness::run_experiment(&spec_in(dir.path(), SMALL)).unwrap();
    for m in [1usize, 4] {
        let firsts: Vec<Vec<Option<f64>>> = table
            .rows
            .iter()
            .filter(|r| r.m == m)
            .map(|r| r.seeds.iter().map(|s| s.initial_objective).collect())
            .collect();
        assert!(firsts.windows(2).all(|w| w[0] == w[1]));
    }
    // The start is a shared center, so it also does not depend on m.
    let f1 = table.find("ring", 1, 1e-3).unwrap().initial_objective_mean().unwrap();
    let f4 = table.find("ring", 4, 1e-3).unwrap().initial_objective_mean().unwrap();
    assert!((f1 - f4).abs() <= 1e-12 * f1.abs());
}

#[test]
fn master_seed_changes_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sa = spec_in(a.path(), SMALL);
    let mut sb = spec_in(b.path(), SMALL);
    sb.master_seed += 1;
    let ta = harness::run_experiment(&sa).unwrap();
    let tb = harness::run_experiment(&sb).unwrap();
    let c = |t: &harness::ResultTable| t.find("ring", 4, 1e-3).unwrap().consensus_mean().unwrap();
    assert_ne!(c(&ta), c(&tb));
}

#[test]
fn write_runs_off_keeps_only_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = spec_in(dir.path(), SMALL);
    spec.write_runs = false;
    spec.m_values = vec![3];
    let table = harness::run_experiment(&spec).unwrap();
    assert!(table.rows.iter().all(|r| r.seeds.iter().all(|s| s.csv_path.is_none())));
    assert!(!dir.path().join("runs").exists());
    assert!(dir.path().join("summary.csv").exists());
}

#[test]
fn shipped_full_config_describes_the_24_cell_sweep() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/full_sweep.toml");
    let spec = harness::load_config(&path).unwrap();
    assert_eq!(spec.combinations(), 24);
    assert_eq!(spec.m_values, vec![1, 5, 10, 100]);
    assert_eq!(spec.gammas, vec![1e-5, 1e-6]);
    assert_eq!((spec.epochs, spec.repeats), (100, 5));
    let names: Vec<&str> = spec.topologies.iter().map(|t| t.name()).collect();
    assert_eq!(names, ["ring", "sparse", "complete"]);

    let quick = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/quick.toml");
    assert_eq!(harness::load_config(&quick).unwrap().combinations(), 4);
}

#[test]
fn shortened_full_sweep_has_every_row() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/full_sweep.toml");
    let dir = tempfile::tempdir().unwrap();
    let mut spec = harness::load_config(&path).unwrap();
    spec.output_dir = dir.path().to_path_buf();
    spec.epochs = 2;
    spec.repeats = 1;
    spec.m_values = vec![1, 5, 10, 30];
    spec.eval.samples = 10;
    spec.eval.inner_budget = 20;
    let table = harness::run_experiment(&spec).unwrap();
    assert_eq!(table.rows.len(), 24);
    assert_eq!(table.failures(), 0);
    for g in [1e-5, 1e-6] {
        for m in [5, 10, 30] {
            assert_eq!(table.find("complete", m, g).unwrap().rho, 0.0);
            let ring = table.find("ring", m, g).unwrap().rho;
            let sparse = table.find("sparse", m, g).unwrap().rho;
            assert!(sparse <= ring);
        }
    }
}
