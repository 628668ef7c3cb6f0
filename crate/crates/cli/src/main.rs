//! Command-line front end: kernel selection on a CSV dataset, meta-regression
//! of log-evidence, and recovery runs on simulated data.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use sotsearch::harness::{run_experiment, Experiment, MetaRegressionConfig, ModelSelectionConfig, SearchSettings, SimulationConfig, Summary};
use sotsearch::{ExprTree, SearchSpace, Strategy};

#[derive(Parser)]
#[command(name = "sotsearch", version, about = "GP kernel structure search with an optimal-transport kernel over expression trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select a kernel for a CSV regression dataset.
    Select {
        #[arg(long)]
        data: PathBuf,
        /// Target column name; defaults to the last column.
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        train_size: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Compare meta-GP, kNN and mean predictions of kernel log-evidence.
    MetaRegress {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: Option<String>,
        /// Rows used to score each kernel.
        #[arg(long, default_value_t = 200)]
        train_size: usize,
        #[arg(long, default_value_t = 500)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_test: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Search on data drawn from a GP prior with a known kernel.
    Simulate {
        /// Ground-truth kernel, e.g. "SE0 * PER0".
        #[arg(long)]
        kernel: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        n_test: usize,
        #[arg(long, default_value_t = 1)]
        dims: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "A")]
    space: SearchSpace,
    #[arg(long, default_value = "sot")]
    method: Strategy,
    /// BO iterations, or the oracle-call budget of the baselines.
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// Hard cap on oracle calls for every method.
    #[arg(long)]
    budget: Option<usize>,
    /// MAP restarts per evidence evaluation.
    #[arg(long, default_value_t = 10)]
    map_restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON file whose fields override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn settings(&self) -> SearchSettings {
        let mut s = SearchSettings { space: self.space, method: self.method, iterations: self.iters, oracle_budget: self.budget, seed: self.seed, ..SearchSettings::default() };
        s.map.restarts = self.map_restarts;
        s
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (experiment, common) = match cli.command {
        Command::Select { data, target, train_size, common } => {
            (Experiment::ModelSelection(ModelSelectionConfig { data, target, train_size, search: common.settings() }), common)
        }
        Command::MetaRegress { data, target, train_size, n_train, n_test, common } => {
            (Experiment::MetaRegression(MetaRegressionConfig { data, target, train_size, n_train, n_test, search: common.settings() }), common)
        }
        Command::Simulate { kernel, n, n_test, dims, noise, common } => {
            let kernel: ExprTree = kernel.parse()?;
            (Experiment::SimulatedRecovery(SimulationConfig { kernel, n, n_test, dimensions: dims, noise, search: common.settings() }), common)
        }
    };
    let experiment = match &common.config {
        Some(path) => apply_overrides(&experiment, path)?,
        None => experiment,
    };
    let record = run_experiment(&experiment, &common.out).with_context(|| format!("experiment writing to {}", common.out.display()))?;
    println!("{}", serde_json::to_string_pretty(&Summary::of(&record))?);
    Ok(())
}

/// Merges the JSON object in `path` over the flag-built experiment.
fn apply_overrides(experiment: &Experiment, path: &Path) -> anyhow::Result<Experiment> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let overrides: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut base = serde_json::to_value(experiment)?;
    if !overrides.is_object() {
        bail!("{}: expected a JSON object", path.display());
    }
    merge(&mut base, overrides);
    serde_json::from_value(base).with_context(|| format!("applying overrides from {}", path.display()))
}

fn merge(base: &mut Value, overrides: Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_merge_keeps_untouched_fields() {
        let mut a = serde_json::json!({"x": 1, "map": {"restarts": 10, "priors": {"noise": 1}}});
        merge(&mut a, serde_json::json!({"map": {"restarts": 3}, "y": 2}));
        assert_eq!(a, serde_json::json!({"x": 1, "y": 2, "map": {"restarts": 3, "priors": {"noise": 1}}}));
    }
}
