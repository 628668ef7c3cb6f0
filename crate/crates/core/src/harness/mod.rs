//! Experiment plumbing: data ingestion, simulation, meta-regression sets and
//! result files.

mod data;
mod meta;
mod run;
mod simulate;

pub use data::{load_dataset, read_csv, split_table, Normalization, SplitData, Table};
pub use meta::{evaluate_meta_regression, generate_meta_regression_sets, rmse, MetaRegressionReport, MetaRegressionSets};
pub use run::{
    run_experiment, test_metrics, write_json, write_trace_csv, Experiment, GroundTruth, MetaRegressionConfig, ModelSelectionConfig, RunRecord, RunRow,
    SearchSettings, SimulationConfig, Summary, TestMetrics,
};
pub use simulate::{default_simulation_params, sample_gp_dataset, sample_gp_prior, simulate_gp_data};
