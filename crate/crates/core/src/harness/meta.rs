//! Kernel/evidence pair generation and the meta-regression comparison of
//! the SOT meta-GP, kNN on the generation graph and the mean predictor.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::grammar::{random_grammar_op, ExprTree, GrammarConfig};
use crate::metamodel::{fit_meta_hyperparams, MetaDataset, MetaHyperparams, MetaPosterior};
use crate::search::{knn_meta_predict, EvidenceOracle, GenerationGraph, DEFAULT_K_CANDIDATES};
use crate::sot::FeatureCache;

/// Proposals per requested tree before generation gives up.
const MAX_PROPOSALS_PER_TREE: usize = 1000;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetaRegressionSets {
    pub train: Vec<(ExprTree, f64)>,
    pub test: Vec<(ExprTree, f64)>,
    /// Every tree reached during generation, failed ones excluded.
    pub graph: GenerationGraph,
    /// Trees dropped because the oracle failed on them.
    pub failures: Vec<(ExprTree, String)>,
}

/// Grows a kernel set from the base kernels: repeatedly pick a member
/// uniformly, apply one random grammar operation, and keep the result if it
/// is new and the oracle scores it. Edges to children already in the set are
/// recorded too. The final set is shuffled and split into `n_train` and
/// `n_test` pairs, disjoint by canonical hash.
pub fn generate_meta_regression_sets<R: Rng + ?Sized>(
    oracle: &dyn EvidenceOracle,
    grammar: &GrammarConfig,
    n_train: usize,
    n_test: usize,
    rng: &mut R,
) -> Result<MetaRegressionSets> {
    let target = n_train + n_test;
    let mut graph = GenerationGraph::new();
    let mut members: Vec<(ExprTree, f64)> = Vec::with_capacity(target);
    let mut known: HashSet<u64> = HashSet::new();
    let mut failed: HashSet<u64> = HashSet::new();
    let mut failures = Vec::new();
    let mut score = |t: ExprTree, members: &mut Vec<(ExprTree, f64)>, graph: &mut GenerationGraph| match oracle.evaluate(&t) {
        Ok(g) if g.is_finite() => {
            graph.add_node(&t);
            members.push((t, g));
            true
        }
        Ok(g) => {
            failures.push((t, format!("non-finite evidence {g}")));
            false
        }
        Err(e) => {
            failures.push((t, e.to_string()));
            false
        }
    };
    for base in grammar.base_kernels() {
        let t = ExprTree::leaf(base);
        let h = t.canonical_hash();
        if members.len() < target && known.insert(h) && !score(t, &mut members, &mut graph) {
            failed.insert(h);
        }
    }
    if members.is_empty() && target > 0 {
        return Err(Error::Oracle("the oracle failed on every base kernel".into()));
    }
    let mut proposals = 0;
    while members.len() < target {
        proposals += 1;
        if proposals > MAX_PROPOSALS_PER_TREE * target {
            return Err(Error::Config(format!("could only generate {} of {target} distinct kernels", members.len())));
        }
        let parent = members[rng.random_range(0..members.len())].0.clone();
        let child = random_grammar_op(&parent, grammar, rng);
        let h = child.canonical_hash();
        if failed.contains(&h) {
            continue;
        }
        if !known.insert(h) {
            graph.add_edge(&parent, &child);
            continue;
        }
        if score(child.clone(), &mut members, &mut graph) {
            graph.add_edge(&parent, &child);
        } else {
            failed.insert(h);
        }
    }
    members.shuffle(rng);
    let test = members.split_off(n_train);
    Ok(MetaRegressionSets { train: members, test, graph, failures })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaRegressionReport {
    pub sot_rmse: f64,
    pub knn_rmse: f64,
    pub mean_rmse: f64,
    pub knn_k: usize,
    pub meta_hyperparams: MetaHyperparams<f64>,
    pub meta_nll: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Test RMSE of the three predictors trained on `sets.train`. The meta-GP
/// hyperparameters maximize the marginal likelihood over `meta_restarts`
/// runs from the data-scaled initial point.
pub fn evaluate_meta_regression<R: Rng + ?Sized>(
    sets: &MetaRegressionSets,
    dimensions: usize,
    meta_restarts: usize,
    rng: &mut R,
) -> Result<MetaRegressionReport> {
    if sets.train.len() < 2 || sets.test.is_empty() {
        return Err(Error::Data("meta-regression needs at least two training and one test pair".into()));
    }
    let truth: Vec<f64> = sets.test.iter().map(|p| p.1).collect();
    let test_trees: Vec<ExprTree> = sets.test.iter().map(|p| p.0.clone()).collect();

    let cache = Arc::new(FeatureCache::new(FeatureConfig::new(dimensions)));
    let md = MetaDataset::from_pairs(cache, sets.train.iter().cloned())?;
    let fit = fit_meta_hyperparams(&md, &MetaHyperparams::initial(md.targets()), meta_restarts, rng)?;
    let sot = MetaPosterior::new(&md, &fit.hyperparams)?.predict(&test_trees)?.mean;

    let knn = knn_meta_predict(&sets.graph, &sets.train, &test_trees, &DEFAULT_K_CANDIDATES)?;
    let train_mean = sets.train.iter().map(|p| p.1).sum::<f64>() / sets.train.len() as f64;

    Ok(MetaRegressionReport {
        sot_rmse: rmse(&sot, &truth),
        knn_rmse: rmse(&knn.predictions, &truth),
        mean_rmse: rmse(&vec![train_mean; truth.len()], &truth),
        knn_k: knn.k,
        meta_hyperparams: fit.hyperparams,
        meta_nll: fit.nll,
        n_train: sets.train.len(),
        n_test: sets.test.len(),
    })
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    (pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truth.len() as f64).sqrt()
}
