//! Kernel structure search: Bayesian optimization with the SOT meta-GP and
//! the greedy, TreeGEP and kNN baselines.
//!
//! All strategies query an [`EvidenceOracle`] and are compared by oracle
//! call count. For BO, `iterations` counts loop iterations after the initial
//! design; for greedy and TreeGEP it is the oracle-call budget. An explicit
//! `oracle_budget` caps every strategy.

mod bo;
mod ea;
mod gep;
mod greedy;
mod knn;
mod oracle;

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use bo::{bo_search, MetaFitRecord};
pub use ea::{evolve_acquisition, initial_population, EaConfig, EaContext, EaOutcome};
pub use gep::{crossover, mutate, mutate_at, tree_gep_search, GepConfig};
pub use greedy::greedy_search;
pub use knn::{knn_meta_predict, GenerationGraph, KnnPrediction, DEFAULT_K_CANDIDATES};
pub use oracle::{mix_seed, CachedOracle, EvidenceOracle, LaplaceOracle};

use crate::error::{Error, Result};
use crate::grammar::{ExprTree, GrammarConfig, SearchSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Sot,
    Greedy,
    TreeGep,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sot => "sot",
            Self::Greedy => "greedy",
            Self::TreeGep => "treegep",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sot" => Ok(Self::Sot),
            "greedy" => Ok(Self::Greedy),
            "treegep" => Ok(Self::TreeGep),
            other => Err(Error::Config(format!("unknown method {other:?} (expected sot, greedy or treegep)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub grammar: GrammarConfig,
    pub iterations: usize,
    pub oracle_budget: Option<usize>,
    pub ea: EaConfig,
    /// Meta-GP fits per BO iteration: one warm start plus fresh restarts.
    pub meta_restarts: usize,
    pub gep: GepConfig,
    pub seed: u64,
}

impl SearchConfig {
    /// Defaults for a search space: 50 iterations, population 100 with 4
    /// offspring per survivor, and the space's EA step count.
    pub fn new(space: SearchSpace, dimensions: usize, seed: u64) -> Self {
        Self {
            grammar: GrammarConfig::preset(space, dimensions),
            iterations: 50,
            oracle_budget: None,
            ea: EaConfig { steps: space.default_ea_steps(), ..EaConfig::default() },
            meta_restarts: 3,
            gep: GepConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grammar.validate()?;
        self.ea.validate()?;
        self.gep.validate()?;
        if self.meta_restarts == 0 {
            return Err(Error::Config("meta_restarts must be at least 1".into()));
        }
        Ok(())
    }

    /// Oracle-call budget of the greedy and TreeGEP baselines.
    pub fn baseline_budget(&self) -> usize {
        self.oracle_budget.unwrap_or(self.iterations)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedKernel {
    pub tree: ExprTree,
    pub g: f64,
    /// BO iteration (0 for the initial design) or, for the baselines, the
    /// oracle call number.
    pub iteration: usize,
    /// 1-based index among all oracle calls, failures included.
    pub oracle_call: usize,
    /// Wall-clock seconds since the search started.
    pub cpu_seconds: f64,
    /// Best `g` observed so far, this evaluation included.
    pub incumbent_g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedEvaluation {
    pub tree: ExprTree,
    pub iteration: usize,
    pub oracle_call: usize,
    pub error: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchTrace {
    pub strategy: Strategy,
    pub evaluations: Vec<EvaluatedKernel>,
    pub failures: Vec<FailedEvaluation>,
    /// Iterations that ended without an evaluation.
    pub gaps: Vec<usize>,
    pub meta_fits: Vec<MetaFitRecord>,
}

impl SearchTrace {
    pub fn incumbent(&self) -> Option<&EvaluatedKernel> {
        self.evaluations.iter().fold(None, |best: Option<&EvaluatedKernel>, e| match best {
            Some(b) if b.g >= e.g => Some(b),
            _ => Some(e),
        })
    }

    pub fn best_g(&self) -> Option<f64> {
        self.incumbent().map(|e| e.g)
    }

    pub fn oracle_calls(&self) -> usize {
        self.evaluations.len() + self.failures.len()
    }

    /// Incumbent `g` after each of the first `calls` oracle calls; failed
    /// calls repeat the previous value.
    pub fn incumbent_after_calls(&self, calls: usize) -> Option<f64> {
        self.evaluations.iter().filter(|e| e.oracle_call <= calls).map(|e| e.g).fold(None, |m, g| Some(m.map_or(g, |m: f64| m.max(g))))
    }
}

/// Shared bookkeeping: oracle calls, attempted hashes, timing, budget.
pub(crate) struct Recorder<'a> {
    oracle: &'a dyn EvidenceOracle,
    start: Instant,
    attempted: HashSet<u64>,
    calls: usize,
    budget: Option<usize>,
    best: f64,
    trace: SearchTrace,
}

impl<'a> Recorder<'a> {
    pub(crate) fn new(oracle: &'a dyn EvidenceOracle, strategy: Strategy, budget: Option<usize>) -> Self {
        Self {
            oracle,
            start: Instant::now(),
            attempted: HashSet::new(),
            calls: 0,
            budget,
            best: f64::NEG_INFINITY,
            trace: SearchTrace { strategy, evaluations: Vec::new(), failures: Vec::new(), gaps: Vec::new(), meta_fits: Vec::new() },
        }
    }

    pub(crate) fn exhausted(&self) -> bool {
        self.budget.is_some_and(|b| self.calls >= b)
    }

    pub(crate) fn attempted(&self, tree: &ExprTree) -> bool {
        self.attempted.contains(&tree.canonical_hash())
    }

    pub(crate) fn attempted_set(&self) -> &HashSet<u64> {
        &self.attempted
    }

    /// Queries the oracle unless the budget is exhausted. Returns `None` on
    /// failure or exhaustion.
    pub(crate) fn evaluate(&mut self, tree: &ExprTree, iteration: usize) -> Option<f64> {
        if self.exhausted() {
            return None;
        }
        self.calls += 1;
        self.attempted.insert(tree.canonical_hash());
        match self.oracle.evaluate(tree) {
            Ok(g) if g.is_finite() => {
                self.best = self.best.max(g);
                self.trace.evaluations.push(EvaluatedKernel {
                    tree: tree.clone(),
                    g,
                    iteration,
                    oracle_call: self.calls,
                    cpu_seconds: self.start.elapsed().as_secs_f64(),
                    incumbent_g: self.best,
                });
                Some(g)
            }
            other => {
                let error = match other {
                    Ok(g) => format!("non-finite evidence {g}"),
                    Err(e) => e.to_string(),
                };
                self.trace.failures.push(FailedEvaluation { tree: tree.clone(), iteration, oracle_call: self.calls, error });
                None
            }
        }
    }

    pub(crate) fn gap(&mut self, iteration: usize) {
        self.trace.gaps.push(iteration);
    }

    pub(crate) fn trace(&self) -> &SearchTrace {
        &self.trace
    }

    pub(crate) fn trace_mut(&mut self) -> &mut SearchTrace {
        &mut self.trace
    }

    pub(crate) fn finish(self) -> SearchTrace {
        self.trace
    }
}

/// Runs the strategy selected by `strategy`.
pub fn run_search(strategy: Strategy, oracle: &dyn EvidenceOracle, config: &SearchConfig) -> Result<SearchTrace> {
    match strategy {
        Strategy::Sot => bo_search(oracle, config),
        Strategy::Greedy => greedy_search(oracle, config),
        Strategy::TreeGep => tree_gep_search(oracle, config),
    }
}
