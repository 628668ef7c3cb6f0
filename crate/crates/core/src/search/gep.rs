//! Tree-based genetic programming baseline with tournament selection,
//! elitism, subtree mutation and subtree crossover.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvidenceOracle, Recorder, SearchConfig, SearchTrace, Strategy};
use crate::error::{Error, Result};
use crate::grammar::{apply_grammar_op, generate_initial_trees, random_grammar_op, ExprTree, GrammarConfig, GrammarOp};

/// Generations in a row without a new oracle call before giving up.
const MAX_STALE_GENERATIONS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GepConfig {
    pub population: usize,
    /// Fraction of each generation copied unchanged from the best parents.
    pub reproduction_rate: f64,
    /// Probability of mutation; crossover otherwise.
    pub mutation_prob: f64,
    /// Tournament size as a fraction of the population.
    pub tournament_fraction: f64,
    /// Leaves of the random subtree inserted by mutation.
    pub mutation_leaves: usize,
}

impl Default for GepConfig {
    fn default() -> Self {
        Self { population: 200, reproduction_rate: 0.1, mutation_prob: 0.5, tournament_fraction: 0.1, mutation_leaves: 4 }
    }
}

impl GepConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.population < 2 || !unit(self.reproduction_rate) || !unit(self.mutation_prob) || !unit(self.tournament_fraction) || self.mutation_leaves == 0 {
            return Err(Error::Config(format!("invalid TreeGEP configuration {self:?}")));
        }
        Ok(())
    }

    fn elites(&self) -> usize {
        ((self.reproduction_rate * self.population as f64).round() as usize).min(self.population)
    }

    fn tournament_size(&self) -> usize {
        ((self.tournament_fraction * self.population as f64).round() as usize).max(1)
    }
}

/// Replaces a uniformly chosen subtree by a random tree of
/// `cfg.mutation_leaves` leaves grown from a random base kernel by extension
/// operations. The depth bound is not enforced.
pub fn mutate<R: Rng + ?Sized>(tree: &ExprTree, grammar: &GrammarConfig, cfg: &GepConfig, rng: &mut R) -> ExprTree {
    let position = rng.random_range(0..tree.node_count());
    mutate_at(tree, position, grammar, cfg, rng).expect("position in range")
}

/// [`mutate`] at a fixed pre-order position.
pub fn mutate_at<R: Rng + ?Sized>(tree: &ExprTree, position: usize, grammar: &GrammarConfig, cfg: &GepConfig, rng: &mut R) -> Result<ExprTree> {
    let mut sub = ExprTree::leaf(grammar.random_base(rng));
    for _ in 1..cfg.mutation_leaves {
        let op = grammar.operators[rng.random_range(0..grammar.operators.len())];
        let position = rng.random_range(0..sub.node_count());
        let base = grammar.random_base(rng);
        sub = apply_grammar_op(&sub, GrammarOp::Extend { op, position, base }).expect("position in range");
    }
    tree.replace_at(position, |_| sub)
}

/// Swaps uniformly chosen subtrees of `a` and `b`.
pub fn crossover<R: Rng + ?Sized>(a: &ExprTree, b: &ExprTree, rng: &mut R) -> (ExprTree, ExprTree) {
    let pa = rng.random_range(0..a.node_count());
    let pb = rng.random_range(0..b.node_count());
    let sa = a.subtree_at(pa).expect("position in range").clone();
    let sb = b.subtree_at(pb).expect("position in range").clone();
    let a2 = a.replace_at(pa, |_| sb).expect("position in range");
    let b2 = b.replace_at(pb, |_| sa).expect("position in range");
    (a2, b2)
}

/// Fitness is the normalized log-evidence; failed evaluations get `-∞`.
/// Trees are memoized by canonical hash, so only new structures consume
/// oracle calls. The initial population is the BO initial design padded with
/// one-operation mutants. Stops at `config.baseline_budget()` calls.
pub fn tree_gep_search(oracle: &dyn EvidenceOracle, config: &SearchConfig) -> Result<SearchTrace> {
    config.validate()?;
    let cfg = &config.gep;
    let grammar = &config.grammar;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rec = Recorder::new(oracle, Strategy::TreeGep, Some(config.baseline_budget()));
    let mut fitness: HashMap<u64, f64> = HashMap::new();
    let mut call = 0;

    let mut pop = generate_initial_trees(grammar, &mut rng);
    pop.truncate(cfg.population);
    let n_seeds = pop.len();
    while pop.len() < cfg.population {
        let parent = pop[rng.random_range(0..n_seeds)].clone();
        pop.push(random_grammar_op(&parent, grammar, &mut rng));
    }

    let mut stale = 0;
    loop {
        let before = rec.trace().oracle_calls();
        let mut scores = Vec::with_capacity(pop.len());
        for t in &pop {
            let h = t.canonical_hash();
            let f = match fitness.get(&h) {
                Some(&f) => f,
                None if rec.exhausted() => f64::NEG_INFINITY,
                None => {
                    call += 1;
                    let f = rec.evaluate(t, call).unwrap_or(f64::NEG_INFINITY);
                    fitness.insert(h, f);
                    f
                }
            };
            scores.push(f);
        }
        if rec.exhausted() {
            break;
        }
        stale = if rec.trace().oracle_calls() == before { stale + 1 } else { 0 };
        if stale >= MAX_STALE_GENERATIONS {
            break;
        }

        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let mut next: Vec<ExprTree> = order.iter().take(cfg.elites()).map(|&i| pop[i].clone()).collect();
        let tsize = cfg.tournament_size();
        let select = |rng: &mut ChaCha8Rng| -> usize {
            (0..tsize).map(|_| rng.random_range(0..pop.len())).fold(None, |best: Option<usize>, i| match best {
                Some(b) if scores[b] >= scores[i] => Some(b),
                _ => Some(i),
            })
            .expect("tournament size is positive")
        };
        while next.len() < cfg.population {
            if rng.random_bool(cfg.mutation_prob) {
                let p = select(&mut rng);
                next.push(mutate(&pop[p], grammar, cfg, &mut rng));
            } else {
                let (a, b) = (select(&mut rng), select(&mut rng));
                let (c, d) = crossover(&pop[a], &pop[b], &mut rng);
                next.push(c);
                if next.len() < cfg.population {
                    next.push(d);
                }
            }
        }
        pop = next;
    }
    Ok(rec.finish())
}
