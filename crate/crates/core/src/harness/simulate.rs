//! Synthetic regression data drawn from a GP prior with a given structure.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::gp::{eval_composite_kernel, Dataset, HyperParams, ParamKind, ParamLayout, PriorConfig};
use crate::grammar::ExprTree;
use crate::harness::Normalization;
use crate::linalg::{Cholesky, Matrix};

/// Kernel hyperparameters used when none are given: unit variances,
/// lengthscale 0.1, period 0.25, LIN offset 0.1, RQ shape 1. The noise slot
/// is `noise_variance`, floored at 1e-10 to stay positive.
pub fn default_simulation_params(tree: &ExprTree, noise_variance: f64) -> Result<HyperParams<f64>> {
    let layout = ParamLayout::for_tree(tree, &PriorConfig::default());
    let values = layout
        .slots()
        .iter()
        .map(|s| match s.kind {
            ParamKind::Variance => 1.0,
            ParamKind::Lengthscale => 0.1,
            ParamKind::Period => 0.25,
            ParamKind::Offset => 0.1,
            ParamKind::Alpha => 1.0,
            ParamKind::Noise => noise_variance.max(1e-10),
        })
        .collect();
    HyperParams::new(layout, values)
}

/// One draw of `f(x) + ε` at the rows of `x`, with `f ~ GP(0, k)` and
/// independent `ε ~ N(0, noise_variance)`. The noise slot of `params` is not
/// used. The Gram matrix is factorized with the jitter ladder.
pub fn sample_gp_prior<R: Rng + ?Sized>(tree: &ExprTree, params: &HyperParams<f64>, x: &Matrix<f64>, noise_variance: f64, rng: &mut R) -> Result<Vec<f64>> {
    let k = eval_composite_kernel(tree, params, x, x)?;
    let chol = Cholesky::with_jitter(&k)?;
    let l = chol.factor();
    let n = x.rows();
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let sd = noise_variance.max(0.0).sqrt();
    Ok((0..n)
        .map(|i| {
            let f: f64 = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
            let e: f64 = StandardNormal.sample(rng);
            f + sd * e
        })
        .collect())
}

/// `n` inputs uniform on `[0, 1]^dimensions` with raw GP-prior targets.
pub fn sample_gp_dataset<R: Rng + ?Sized>(
    tree: &ExprTree,
    params: &HyperParams<f64>,
    n: usize,
    dimensions: usize,
    noise_variance: f64,
    rng: &mut R,
) -> Result<Dataset<f64>> {
    let x = Matrix::from_fn(n, dimensions, |_, _| rng.random::<f64>());
    let y = sample_gp_prior(tree, params, &x, noise_variance, rng)?;
    Dataset::new(x, y)
}

/// [`sample_gp_dataset`] with the targets standardized. Inputs already lie
/// in the unit cube and are left as drawn.
pub fn simulate_gp_data<R: Rng + ?Sized>(
    tree: &ExprTree,
    params: &HyperParams<f64>,
    n: usize,
    dimensions: usize,
    noise_variance: f64,
    rng: &mut R,
) -> Result<(Dataset<f64>, Normalization)> {
    let raw = sample_gp_dataset(tree, params, n, dimensions, noise_variance, rng)?;
    let norm = Normalization::fit(raw.x(), raw.y(), false);
    Ok((norm.apply(&raw)?, norm))
}
