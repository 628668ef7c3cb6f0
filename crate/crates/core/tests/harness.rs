//! End-to-end experiment runs on small files, plus a Monte Carlo check of
//! the GP prior sampler.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sotsearch::gp::eval_composite_kernel;
use sotsearch::harness::{
    default_simulation_params, run_experiment, sample_gp_prior, Experiment, MetaRegressionConfig, ModelSelectionConfig, RunRecord, SearchSettings,
    SimulationConfig,
};
use sotsearch::linalg::Matrix;
use sotsearch::ExprTree;

fn write_csv(path: &Path, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from("a,b,y\n");
    for _ in 0..n {
        let (a, b): (f64, f64) = (rng.random(), rng.random_range(-3.0..3.0));
        let y = (6.0 * a).sin() + 0.3 * b + 0.05 * rng.random::<f64>();
        writeln!(s, "{a},{b},{y}").unwrap();
    }
    std::fs::write(path, s).unwrap();
}

fn quick_settings(iterations: usize, seed: u64) -> SearchSettings {
    let mut s = SearchSettings { iterations, seed, ea_population: 30, ea_steps: Some(2), meta_restarts: 2, ..SearchSettings::default() };
    s.map.restarts = 2;
    s
}

#[test]
fn prior_samples_have_the_kernel_covariance() {
    let tree: ExprTree = "SE0 * PER0 + LIN0".parse().unwrap();
    let noise = 0.05;
    let params = default_simulation_params(&tree, noise).unwrap();
    let x = Matrix::from_rows(&[vec![0.1], vec![0.17]]);
    let k = eval_composite_kernel(&tree, &params, &x, &x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let draws = 20_000;
    let mut acc = [0.0; 3];
    let mut sums = [0.0; 2];
    for _ in 0..draws {
        let y = sample_gp_prior(&tree, &params, &x, noise, &mut rng).unwrap();
        acc[0] += y[0] * y[0];
        acc[1] += y[0] * y[1];
        acc[2] += y[1] * y[1];
        sums[0] += y[0];
        sums[1] += y[1];
    }
    let n = draws as f64;
    let cov = |s: f64, a: f64, b: f64| s / n - a / n * b / n;
    let emp = [cov(acc[0], sums[0], sums[0]), cov(acc[1], sums[0], sums[1]), cov(acc[2], sums[1], sums[1])];
    let want = [k[(0, 0)] + noise, k[(0, 1)], k[(1, 1)] + noise];
    // 5% of the covariance scale; the standard error here is about 1%
    let scale = (want[0] * want[2]).sqrt();
    for (e, w) in emp.iter().zip(&want) {
        assert!((e - w).abs() <= 0.05 * scale, "empirical {e} vs {w}");
    }
    assert!(sums.iter().all(|s| (s / n).abs() < 0.05));
}

fn read_record(dir: &Path) -> RunRecord {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap()
}

#[test]
fn model_selection_writes_a_replayable_record() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_csv(&csv, 60, 1);
    let exp = Experiment::ModelSelection(ModelSelectionConfig { data: csv, target: None, train_size: 40, search: quick_settings(4, 9) });
    let out = dir.path().join("run");
    let record = run_experiment(&exp, &out).unwrap();

    let initial = record.rows.iter().filter(|r| r.iteration == 0).count();
    let gaps = record.trace.as_ref().unwrap().gaps.len();
    assert_eq!(record.rows.len() + gaps, initial + 4);
    let test = record.test.unwrap();
    assert_eq!(test.n_test, 20);
    assert!(test.rmse.is_finite() && test.nll.is_finite());
    let csv_lines = std::fs::read_to_string(out.join("trace.csv")).unwrap().lines().count();
    assert_eq!(csv_lines, record.rows.len() + 1);
    assert!(out.join("summary.json").exists());

    // the stored experiment replays to the same rows
    let stored = read_record(&out);
    assert_eq!(stored.experiment, exp);
    let replay = run_experiment(&stored.experiment, &dir.path().join("replay")).unwrap();
    let key = |r: &RunRecord| r.rows.iter().map(|row| (row.tree.to_string(), row.g)).collect::<Vec<_>>();
    assert_eq!(key(&replay), key(&record));
}

#[test]
fn fifty_iterations_add_fifty_rows_to_the_initial_design() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_csv(&csv, 100, 2);
    let mut search = quick_settings(50, 4);
    search.ea_population = 100;
    search.ea_steps = None;
    let exp = Experiment::ModelSelection(ModelSelectionConfig { data: csv, target: Some("y".into()), train_size: 100, search });
    let record = run_experiment(&exp, dir.path()).unwrap();
    let trace = record.trace.as_ref().unwrap();
    let initial = record.rows.iter().filter(|r| r.iteration == 0).count();
    assert_eq!(record.rows.len() + trace.gaps.len(), initial + 50);
    assert!(record.test.is_none());
    for w in record.rows.windows(2) {
        assert!(w[1].incumbent_g >= w[0].incumbent_g);
        assert!(w[1].cpu_seconds >= w[0].cpu_seconds);
    }
}

#[test]
fn simulated_recovery_records_the_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let kernel: ExprTree = "SE0 + LIN0".parse().unwrap();
    let exp = Experiment::SimulatedRecovery(SimulationConfig { kernel: kernel.clone(), n: 40, n_test: 15, dimensions: 1, noise: 0.01, search: quick_settings(3, 5) });
    let record = run_experiment(&exp, dir.path()).unwrap();
    let gt = record.ground_truth.as_ref().unwrap();
    assert_eq!(gt.tree, kernel);
    assert!(gt.g.is_finite());
    assert_eq!(gt.test.unwrap().n_test, 15);
    assert_eq!(record.test.unwrap().n_test, 15);
    let norm = record.normalization.as_ref().unwrap();
    // inputs stay as drawn
    assert!(norm.x_min.iter().all(|&m| m == 0.0) && norm.x_range.iter().all(|&r| r == 1.0));
}

#[test]
fn meta_regression_writes_sets_and_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_csv(&csv, 50, 3);
    let exp = Experiment::MetaRegression(MetaRegressionConfig { data: csv, target: None, train_size: 30, n_train: 20, n_test: 10, search: quick_settings(0, 6) });
    let out = dir.path().join("meta");
    let record = run_experiment(&exp, &out).unwrap();
    let report = record.meta_regression.unwrap();
    assert_eq!((report.n_train, report.n_test), (20, 10));
    for v in [report.sot_rmse, report.knn_rmse, report.mean_rmse] {
        assert!(v.is_finite() && v >= 0.0);
    }
    let sets: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("sets.json")).unwrap()).unwrap();
    assert_eq!(sets["train"].as_array().unwrap().len(), 20);
    assert!(record.rows.is_empty());
}

#[test]
fn experiments_round_trip_through_tagged_json() {
    let exp = Experiment::SimulatedRecovery(SimulationConfig {
        kernel: "SE0 * PER0".parse().unwrap(),
        n: 100,
        n_test: 0,
        dimensions: 1,
        noise: 0.01,
        search: SearchSettings::default(),
    });
    let v = serde_json::to_value(&exp).unwrap();
    assert_eq!(v["kind"], "simulated-recovery");
    assert_eq!(v["iterations"], 50);
    let back: Experiment = serde_json::from_value(v).unwrap();
    assert_eq!(back, exp);
    let minimal: Experiment = serde_json::from_str(r#"{"kind":"simulated-recovery","kernel":"SE0","n":10}"#).unwrap();
    assert_eq!(minimal.settings(), &SearchSettings::default());
}
