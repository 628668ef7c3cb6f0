//! Evolutionary optimization of the acquisition function over trees.
//!
//! Each step keeps the best `n_survive = n_population / (n_offspring + 1)`
//! trees and gives every survivor `n_offspring` children, each one random
//! grammar operation away. A child has at most one more leaf than its
//! parent, so trees grow by at most one leaf per step.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{random_grammar_op, ExprTree, GrammarConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EaConfig {
    pub population: usize,
    pub offspring: usize,
    pub steps: usize,
    /// Best observed trees used as seeds besides the incumbent.
    pub top_seeds: usize,
}

impl Default for EaConfig {
    fn default() -> Self {
        Self { population: 100, offspring: 4, steps: 6, top_seeds: 5 }
    }
}

impl EaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || !self.population.is_multiple_of(self.offspring + 1) {
            return Err(Error::Config(format!(
                "EA population {} must be a positive multiple of offspring + 1 = {}",
                self.population,
                self.offspring + 1
            )));
        }
        Ok(())
    }

    pub fn survivors(&self) -> usize {
        self.population / (self.offspring + 1)
    }
}

/// What the EA knows about the search so far.
#[derive(Clone, Copy, Debug, Default)]
pub struct EaContext<'a> {
    pub incumbent: Option<&'a ExprTree>,
    /// Observed trees, best first.
    pub top: &'a [ExprTree],
    /// Hashes that must not be proposed again.
    pub evaluated: Option<&'a HashSet<u64>>,
}

#[derive(Clone, Debug)]
pub struct EaOutcome {
    /// Highest-scoring member of the final population.
    pub argmax: ExprTree,
    pub argmax_score: f64,
    /// `argmax` if unevaluated, else the best unevaluated member of the final
    /// population, else the best unevaluated tree scored during the run.
    pub proposal: Option<(ExprTree, f64)>,
    /// Population size at the start of every step and at the end.
    pub population_sizes: Vec<usize>,
    pub initial_max_leaves: usize,
    /// Largest leaf count of any tree that entered a population.
    pub max_leaves: usize,
    /// Number of distinct trees passed to the acquisition.
    pub scored: usize,
}

/// Base kernels, then the incumbent and the top observed trees, padded to
/// the population size with one-operation mutants of those seeds.
pub fn initial_population<R: Rng + ?Sized>(grammar: &GrammarConfig, ea: &EaConfig, context: &EaContext<'_>, rng: &mut R) -> Vec<ExprTree> {
    let mut seen = HashSet::new();
    let mut pop = Vec::with_capacity(ea.population);
    let seeds = grammar
        .base_kernels()
        .into_iter()
        .map(ExprTree::leaf)
        .chain(context.incumbent.cloned())
        .chain(context.top.iter().take(ea.top_seeds).cloned());
    for t in seeds {
        if pop.len() < ea.population && seen.insert(t.canonical_hash()) {
            pop.push(t);
        }
    }
    let n_seeds = pop.len();
    let mut tries = 0;
    while pop.len() < ea.population {
        let parent = &pop[rng.random_range(0..n_seeds)];
        let child = random_grammar_op(parent, grammar, rng);
        tries += 1;
        // duplicates are admitted once fresh mutants become hard to find
        if seen.insert(child.canonical_hash()) || tries > 20 * ea.population {
            pop.push(child);
        }
    }
    pop
}

/// Maximizes `acquisition` over trees. The acquisition scores a batch and is
/// called once per step on the trees it has not seen yet; non-finite scores
/// rank last.
pub fn evolve_acquisition<F, R>(mut acquisition: F, grammar: &GrammarConfig, ea: &EaConfig, context: &EaContext<'_>, rng: &mut R) -> Result<EaOutcome>
where
    F: FnMut(&[ExprTree]) -> Result<Vec<f64>>,
    R: Rng + ?Sized,
{
    ea.validate()?;
    let mut memo: HashMap<u64, (ExprTree, f64)> = HashMap::new();
    let mut score = |pop: &[ExprTree], memo: &mut HashMap<u64, (ExprTree, f64)>| -> Result<Vec<f64>> {
        let mut fresh = Vec::new();
        let mut fresh_hashes = HashSet::new();
        for t in pop {
            let h = t.canonical_hash();
            if !memo.contains_key(&h) && fresh_hashes.insert(h) {
                fresh.push(t.clone());
            }
        }
        if !fresh.is_empty() {
            let s = acquisition(&fresh)?;
            if s.len() != fresh.len() {
                return Err(Error::ShapeMismatch(format!("acquisition returned {} scores for {} trees", s.len(), fresh.len())));
            }
            for (t, v) in fresh.into_iter().zip(s) {
                let v = if v.is_finite() { v } else { f64::NEG_INFINITY };
                memo.insert(t.canonical_hash(), (t, v));
            }
        }
        Ok(pop.iter().map(|t| memo[&t.canonical_hash()].1).collect())
    };

    let mut pop = initial_population(grammar, ea, context, rng);
    let initial_max_leaves = pop.iter().map(ExprTree::leaf_count).max().unwrap_or(0);
    let mut max_leaves = initial_max_leaves;
    let mut population_sizes = Vec::with_capacity(ea.steps + 1);
    let n_survive = ea.survivors();
    for _ in 0..ea.steps {
        population_sizes.push(pop.len());
        let scores = score(&pop, &mut memo)?;
        let order = ranking(&scores);
        let survivors: Vec<ExprTree> = order.iter().take(n_survive).map(|&i| pop[i].clone()).collect();
        let mut next = survivors.clone();
        for parent in &survivors {
            for _ in 0..ea.offspring {
                let child = random_grammar_op(parent, grammar, rng);
                max_leaves = max_leaves.max(child.leaf_count());
                next.push(child);
            }
        }
        pop = next;
    }
    population_sizes.push(pop.len());
    let scores = score(&pop, &mut memo)?;
    let order = ranking(&scores);
    let best = order[0];
    let evaluated = |t: &ExprTree| context.evaluated.is_some_and(|e| e.contains(&t.canonical_hash()));
    let proposal = order
        .iter()
        .map(|&i| (&pop[i], scores[i]))
        .find(|(t, _)| !evaluated(t))
        .map(|(t, s)| (t.clone(), s))
        .or_else(|| {
            let mut rest: Vec<&(ExprTree, f64)> = memo.values().filter(|(t, _)| !evaluated(t)).collect();
            // hash order is arbitrary; break ties by canonical hash for determinism
            rest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.canonical_hash().cmp(&b.0.canonical_hash())));
            rest.first().map(|(t, s)| (t.clone(), *s))
        });
    Ok(EaOutcome {
        argmax: pop[best].clone(),
        argmax_score: scores[best],
        proposal,
        population_sizes,
        initial_max_leaves,
        max_leaves,
        scored: memo.len(),
    })
}

/// Indices by descending score; ties keep population order.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{KernelFamily, Operator, DEFAULT_DEPTH_BOUND};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grammar() -> GrammarConfig {
        GrammarConfig::new(KernelFamily::ALL.to_vec(), 1, Operator::ALL.to_vec(), DEFAULT_DEPTH_BOUND).unwrap()
    }

    #[test]
    fn rejects_indivisible_population() {
        let ea = EaConfig { population: 99, ..EaConfig::default() };
        assert!(ea.validate().is_err());
    }

    #[test]
    fn zero_steps_is_argmax_of_initial_population() {
        let g = grammar();
        let ea = EaConfig { steps: 0, population: 10, offspring: 4, top_seeds: 5 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = evolve_acquisition(|ts: &[ExprTree]| Ok(ts.iter().map(|t| t.leaf_count() as f64).collect()), &g, &ea, &EaContext::default(), &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pop = initial_population(&g, &ea, &EaContext::default(), &mut rng);
        let best = pop.iter().map(|t| t.leaf_count()).max().unwrap();
        assert_eq!(out.argmax.leaf_count(), best);
        assert_eq!(out.population_sizes, vec![10]);
    }

    #[test]
    fn proposal_skips_evaluated_trees() {
        let g = grammar();
        let ea = EaConfig { steps: 2, population: 20, offspring: 4, top_seeds: 5 };
        let evaluated: HashSet<u64> = g.base_kernels().into_iter().map(|b| ExprTree::leaf(b).canonical_hash()).collect();
        let ctx = EaContext { evaluated: Some(&evaluated), ..EaContext::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = evolve_acquisition(|ts: &[ExprTree]| Ok(ts.iter().map(|t| -(t.leaf_count() as f64)).collect()), &g, &ea, &ctx, &mut rng).unwrap();
        assert!(out.argmax.is_leaf());
        let (p, _) = out.proposal.unwrap();
        assert!(!evaluated.contains(&p.canonical_hash()));
    }

    #[test]
    fn acquisition_sees_each_tree_once() {
        let g = grammar();
        let ea = EaConfig { steps: 4, population: 20, offspring: 4, top_seeds: 5 };
        let mut seen = HashSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let out = evolve_acquisition(
            |ts: &[ExprTree]| {
                for t in ts {
                    assert!(seen.insert(t.canonical_hash()));
                }
                Ok(vec![0.0; ts.len()])
            },
            &g,
            &ea,
            &EaContext::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.scored, seen.len());
    }
}
