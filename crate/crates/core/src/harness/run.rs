//! Experiment orchestration and result files.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{load_dataset, Normalization};
use super::meta::{evaluate_meta_regression, generate_meta_regression_sets, MetaRegressionReport};
use super::simulate::{default_simulation_params, sample_gp_dataset};
use crate::error::{Error, Result};
use crate::gp::{posterior_predict, Dataset, MapConfig};
use crate::grammar::{ExprTree, SearchSpace};
use crate::search::{mix_seed, run_search, CachedOracle, EvidenceOracle, LaplaceOracle, SearchConfig, SearchTrace, Strategy};

/// Search settings shared by the experiment kinds. Missing JSON fields take
/// the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    pub space: SearchSpace,
    pub method: Strategy,
    pub iterations: usize,
    pub oracle_budget: Option<usize>,
    /// EA steps; the space's default when absent.
    pub ea_steps: Option<usize>,
    pub ea_population: usize,
    pub ea_offspring: usize,
    pub meta_restarts: usize,
    pub map: MapConfig,
    pub seed: u64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            space: SearchSpace::A,
            method: Strategy::Sot,
            iterations: 50,
            oracle_budget: None,
            ea_steps: None,
            ea_population: 100,
            ea_offspring: 4,
            meta_restarts: 3,
            map: MapConfig::default(),
            seed: 0,
        }
    }
}

impl SearchSettings {
    pub fn search_config(&self, dimensions: usize) -> SearchConfig {
        let mut c = SearchConfig::new(self.space, dimensions, self.seed);
        c.iterations = self.iterations;
        c.oracle_budget = self.oracle_budget;
        if let Some(s) = self.ea_steps {
            c.ea.steps = s;
        }
        c.ea.population = self.ea_population;
        c.ea.offspring = self.ea_offspring;
        c.meta_restarts = self.meta_restarts;
        c
    }

    /// Oracle on `data` whose per-tree seeds derive from the run seed.
    pub fn oracle(&self, data: Dataset<f64>) -> CachedOracle<LaplaceOracle> {
        CachedOracle::new(LaplaceOracle::new(data, self.map.clone(), mix_seed(self.seed, 0x0AC1E)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSelectionConfig {
    pub data: PathBuf,
    /// Target column; the last column when absent.
    pub target: Option<String>,
    pub train_size: usize,
    #[serde(flatten)]
    pub search: SearchSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaRegressionConfig {
    pub data: PathBuf,
    pub target: Option<String>,
    /// Rows used to fit the GPs whose evidence is regressed.
    pub train_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(flatten)]
    pub search: SearchSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub kernel: ExprTree,
    pub n: usize,
    /// Extra simulated points held out for test metrics.
    #[serde(default)]
    pub n_test: usize,
    #[serde(default = "default_dimensions")]
    pub dimensions: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(flatten)]
    pub search: SearchSettings,
}

fn default_dimensions() -> usize {
    1
}

fn default_noise() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    ModelSelection(ModelSelectionConfig),
    MetaRegression(MetaRegressionConfig),
    SimulatedRecovery(SimulationConfig),
}

impl Experiment {
    pub fn settings(&self) -> &SearchSettings {
        match self {
            Self::ModelSelection(c) => &c.search,
            Self::MetaRegression(c) => &c.search,
            Self::SimulatedRecovery(c) => &c.search,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub iteration: usize,
    pub oracle_call: usize,
    pub cpu_seconds: f64,
    pub incumbent_g: f64,
    pub g: f64,
    pub tree: ExprTree,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub rmse: f64,
    pub nll: f64,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tree: ExprTree,
    pub g: f64,
    pub test: Option<TestMetrics>,
}

/// Everything needed to interpret and replay one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: Experiment,
    pub seed: u64,
    pub rows: Vec<RunRow>,
    pub trace: Option<SearchTrace>,
    pub incumbent: Option<RunRow>,
    pub test: Option<TestMetrics>,
    pub normalization: Option<Normalization>,
    pub ground_truth: Option<GroundTruth>,
    pub meta_regression: Option<MetaRegressionReport>,
    pub wall_seconds: f64,
}

impl RunRecord {
    fn new(experiment: &Experiment) -> Self {
        Self {
            seed: experiment.settings().seed,
            experiment: experiment.clone(),
            rows: Vec::new(),
            trace: None,
            incumbent: None,
            test: None,
            normalization: None,
            ground_truth: None,
            meta_regression: None,
            wall_seconds: 0.0,
        }
    }

    fn set_trace(&mut self, trace: SearchTrace) {
        self.rows = trace
            .evaluations
            .iter()
            .map(|e| RunRow { iteration: e.iteration, oracle_call: e.oracle_call, cpu_seconds: e.cpu_seconds, incumbent_g: e.incumbent_g, g: e.g, tree: e.tree.clone() })
            .collect();
        self.incumbent = trace.incumbent().and_then(|best| self.rows.iter().find(|r| r.oracle_call == best.oracle_call).cloned());
        self.trace = Some(trace);
    }
}

/// Compact result summary written next to the full record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub kind: String,
    pub method: Strategy,
    pub seed: u64,
    pub oracle_calls: usize,
    pub failures: usize,
    pub gaps: usize,
    pub best_tree: Option<ExprTree>,
    pub best_g: Option<f64>,
    pub test: Option<TestMetrics>,
    pub ground_truth_g: Option<f64>,
    pub meta_regression: Option<MetaRegressionReport>,
    pub wall_seconds: f64,
}

impl Summary {
    pub fn of(record: &RunRecord) -> Self {
        let trace = record.trace.as_ref();
        Self {
            kind: match record.experiment {
                Experiment::ModelSelection(_) => "model-selection",
                Experiment::MetaRegression(_) => "meta-regression",
                Experiment::SimulatedRecovery(_) => "simulated-recovery",
            }
            .into(),
            method: record.experiment.settings().method,
            seed: record.seed,
            oracle_calls: trace.map_or(0, SearchTrace::oracle_calls),
            failures: trace.map_or(0, |t| t.failures.len()),
            gaps: trace.map_or(0, |t| t.gaps.len()),
            best_tree: record.incumbent.as_ref().map(|r| r.tree.clone()),
            best_g: record.incumbent.as_ref().map(|r| r.g),
            test: record.test,
            ground_truth_g: record.ground_truth.as_ref().map(|g| g.g),
            meta_regression: record.meta_regression.clone(),
            wall_seconds: record.wall_seconds,
        }
    }
}

/// Runs `experiment` and writes `run.json`, `trace.csv` and `summary.json`
/// into `out_dir`, which is created if needed. Meta-regression also writes
/// `sets.json` as soon as the kernel sets are scored.
pub fn run_experiment(experiment: &Experiment, out_dir: &Path) -> Result<RunRecord> {
    let start = std::time::Instant::now();
    fs::create_dir_all(out_dir).map_err(|source| Error::Io { path: out_dir.to_path_buf(), source })?;
    let settings = experiment.settings();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut record = RunRecord::new(experiment);
    match experiment {
        Experiment::ModelSelection(c) => {
            let split = load_dataset(&c.data, c.target.as_deref(), c.train_size, &mut rng)?;
            let dims = split.train.dimensions();
            let oracle = settings.oracle(split.train.clone());
            let trace = run_search(settings.method, &oracle, &settings.search_config(dims))?;
            if let (Some(best), Some(test)) = (trace.incumbent(), split.test.as_ref()) {
                record.test = Some(test_metrics(oracle.inner(), &best.tree, test)?);
            }
            record.normalization = Some(split.normalization);
            record.set_trace(trace);
        }
        Experiment::SimulatedRecovery(c) => {
            let truth = default_simulation_params(&c.kernel, c.noise)?;
            let raw = sample_gp_dataset(&c.kernel, &truth, c.n + c.n_test, c.dimensions, c.noise, &mut rng)?;
            let train_idx: Vec<usize> = (0..c.n).collect();
            let raw_train = raw.subset(&train_idx)?;
            let norm = Normalization::fit(raw_train.x(), raw_train.y(), false);
            let train = norm.apply(&raw_train)?;
            let test = if c.n_test > 0 { Some(norm.apply(&raw.subset(&(c.n..c.n + c.n_test).collect::<Vec<_>>())?)?) } else { None };
            let oracle = settings.oracle(train);
            let gt_g = oracle.evaluate(&c.kernel)?;
            let gt_test = test.as_ref().map(|t| test_metrics(oracle.inner(), &c.kernel, t)).transpose()?;
            record.ground_truth = Some(GroundTruth { tree: c.kernel.clone(), g: gt_g, test: gt_test });
            let trace = run_search(settings.method, &oracle, &settings.search_config(c.dimensions))?;
            if let (Some(best), Some(test)) = (trace.incumbent(), test.as_ref()) {
                record.test = Some(test_metrics(oracle.inner(), &best.tree, test)?);
            }
            record.normalization = Some(norm);
            record.set_trace(trace);
        }
        Experiment::MetaRegression(c) => {
            let split = load_dataset(&c.data, c.target.as_deref(), c.train_size, &mut rng)?;
            let dims = split.train.dimensions();
            let oracle = settings.oracle(split.train.clone());
            let grammar = settings.search_config(dims).grammar;
            let sets = generate_meta_regression_sets(&oracle, &grammar, c.n_train, c.n_test, &mut rng)?;
            write_json(&out_dir.join("sets.json"), &sets)?;
            record.meta_regression = Some(evaluate_meta_regression(&sets, dims, settings.meta_restarts, &mut rng)?);
            record.normalization = Some(split.normalization);
        }
    }
    record.wall_seconds = start.elapsed().as_secs_f64();
    write_json(&out_dir.join("run.json"), &record)?;
    write_trace_csv(&out_dir.join("trace.csv"), &record.rows)?;
    write_json(&out_dir.join("summary.json"), &Summary::of(&record))?;
    Ok(record)
}

/// Test RMSE and mean predictive NLL of `tree` at its MAP hyperparameters,
/// in normalized units.
pub fn test_metrics(oracle: &LaplaceOracle, tree: &ExprTree, test: &Dataset<f64>) -> Result<TestMetrics> {
    let ev = oracle.evidence(tree)?;
    let pred = posterior_predict(tree, &ev.map_params, oracle.data(), test.x())?;
    Ok(TestMetrics { rmse: pred.rmse(test.y()), nll: pred.mean_nll(test.y()), n_test: test.len() })
}

pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Columns: iteration, cpu_seconds, incumbent_g, oracle_call, g, tree.
pub fn write_trace_csv(path: &Path, rows: &[RunRow]) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["iteration", "cpu_seconds", "incumbent_g", "oracle_call", "g", "tree"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.cpu_seconds.to_string(),
            r.incumbent_g.to_string(),
            r.oracle_call.to_string(),
            r.g.to_string(),
            r.tree.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
