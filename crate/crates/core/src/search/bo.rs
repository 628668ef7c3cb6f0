//! Bayesian optimization over kernel structures with the SOT meta-GP as
//! surrogate and expected improvement as acquisition.

use std::collections::HashSet;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ea::{evolve_acquisition, EaContext};
use super::{EvidenceOracle, Recorder, SearchConfig, SearchTrace, Strategy};
use crate::error::Result;
use crate::features::FeatureConfig;
use crate::grammar::{generate_initial_trees, random_grammar_op, ExprTree};
use crate::metamodel::{expected_improvement_batch, fit_meta_hyperparams, MetaDataset, MetaHyperparams, MetaPosterior};
use crate::sot::FeatureCache;

/// Mutations of the EA argmax tried when every scored tree was evaluated.
const FALLBACK_MUTATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaFitRecord {
    pub iteration: usize,
    pub nll: f64,
    pub init_nll: f64,
    pub hyperparams: MetaHyperparams<f64>,
    pub warning: Option<String>,
}

/// Evaluates the initial design, then for each of `config.iterations`
/// iterations refits the meta-GP, maximizes expected improvement with the EA
/// and evaluates one new tree. A failed evaluation is re-proposed once; a
/// second failure leaves a gap. No canonical hash is evaluated twice.
pub fn bo_search(oracle: &dyn EvidenceOracle, config: &SearchConfig) -> Result<SearchTrace> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rec = Recorder::new(oracle, Strategy::Sot, config.oracle_budget);
    let cache = Arc::new(FeatureCache::new(FeatureConfig::new(config.grammar.dimensions)));
    let mut md = MetaDataset::new(cache);

    for tree in generate_initial_trees(&config.grammar, &mut rng) {
        if let Some(g) = rec.evaluate(&tree, 0) {
            md.push(tree, g)?;
        }
    }

    let mut hyp: Option<MetaHyperparams<f64>> = None;
    for iteration in 1..=config.iterations {
        if rec.exhausted() {
            break;
        }
        let posterior = if md.len() >= 2 {
            let init = hyp.take().unwrap_or_else(|| MetaHyperparams::initial(md.targets()));
            let fit = fit_meta_hyperparams(&md, &init, config.meta_restarts, &mut rng)?;
            rec.trace_mut().meta_fits.push(MetaFitRecord {
                iteration,
                nll: fit.nll,
                init_nll: fit.init_nll,
                hyperparams: fit.hyperparams.clone(),
                warning: fit.warning,
            });
            let p = MetaPosterior::new(&md, &fit.hyperparams)?;
            hyp = Some(fit.hyperparams);
            Some(p)
        } else {
            None
        };
        let best = md.targets().iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let mut evaluated = false;
        for _attempt in 0..2 {
            let Some(tree) = propose(config, &md, posterior.as_ref(), best, rec.attempted_set(), &mut rng)? else {
                break;
            };
            if let Some(g) = rec.evaluate(&tree, iteration) {
                md.push(tree, g)?;
                evaluated = true;
                break;
            }
            if rec.exhausted() {
                break;
            }
        }
        if !evaluated {
            rec.gap(iteration);
        }
    }
    Ok(rec.finish())
}

/// One EA run on expected improvement; `None` when no unevaluated tree could
/// be found. Without a posterior (fewer than two observations) every tree
/// scores zero.
fn propose(
    config: &SearchConfig,
    md: &MetaDataset<f64>,
    posterior: Option<&MetaPosterior<f64>>,
    best: f64,
    attempted: &HashSet<u64>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<ExprTree>> {
    let mut order: Vec<usize> = (0..md.len()).collect();
    order.sort_by(|&a, &b| md.targets()[b].total_cmp(&md.targets()[a]));
    let top: Vec<ExprTree> = order.iter().take(config.ea.top_seeds).map(|&i| md.trees()[i].clone()).collect();
    let context = EaContext { incumbent: top.first(), top: &top, evaluated: Some(attempted) };
    let acquisition = |trees: &[ExprTree]| -> Result<Vec<f64>> {
        match posterior {
            Some(p) => Ok(expected_improvement_batch(&p.predict(trees)?, best)),
            None => Ok(vec![0.0; trees.len()]),
        }
    };
    let outcome = evolve_acquisition(acquisition, &config.grammar, &config.ea, &context, rng)?;
    if let Some((tree, _)) = outcome.proposal {
        return Ok(Some(tree));
    }
    for _ in 0..FALLBACK_MUTATIONS {
        let t = random_grammar_op(&outcome.argmax, &config.grammar, rng);
        if !attempted.contains(&t.canonical_hash()) {
            return Ok(Some(t));
        }
    }
    Ok(None)
}
