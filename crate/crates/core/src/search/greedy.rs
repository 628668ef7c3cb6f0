//! Greedy neighborhood search: evaluate every base kernel, then repeatedly
//! expand the incumbent into all its one-operation neighbors.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EvidenceOracle, Recorder, SearchConfig, SearchTrace, Strategy};
use crate::error::Result;
use crate::grammar::{neighbors, ExprTree};

/// Base kernels are evaluated first, in grammar order. Neighbors of the
/// current incumbent are then evaluated in a seed-shuffled order; once a
/// neighborhood is exhausted the search moves to the best evaluated tree not
/// yet expanded, which is the new incumbent whenever one was found. Stops at
/// `config.baseline_budget()` oracle calls or when nothing is left to expand.
pub fn greedy_search(oracle: &dyn EvidenceOracle, config: &SearchConfig) -> Result<SearchTrace> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rec = Recorder::new(oracle, Strategy::Greedy, Some(config.baseline_budget()));
    let mut call = 0;
    for base in config.grammar.base_kernels() {
        call += 1;
        rec.evaluate(&ExprTree::leaf(base), call);
    }
    let mut expanded: HashSet<u64> = HashSet::new();
    while !rec.exhausted() {
        let next = rec
            .trace()
            .evaluations
            .iter()
            .filter(|e| !expanded.contains(&e.tree.canonical_hash()))
            .fold(None, |best: Option<&super::EvaluatedKernel>, e| match best {
                Some(b) if b.g >= e.g => Some(b),
                _ => Some(e),
            })
            .map(|e| e.tree.clone());
        let Some(center) = next else { break };
        expanded.insert(center.canonical_hash());
        let mut hood = neighbors(&center, &config.grammar);
        hood.shuffle(&mut rng);
        for t in hood {
            if rec.exhausted() {
                break;
            }
            if !rec.attempted(&t) {
                call += 1;
                rec.evaluate(&t, call);
            }
        }
    }
    Ok(rec.finish())
}
