//! Optimal transport between tree feature distributions and the resulting
//! kernel over expression trees.
//!
//! With the indicator ground metric `d(E, E') = 1[E != E']` the optimal
//! transport cost between two discrete distributions is their total
//! variation distance, `½ Σ_E |ω₁(E) − ω₂(E)|`, taken over the union of the
//! supports. The tree distance is a convex combination of the total variation
//! distances of the base, path and subtree distributions, and the kernel is
//! `σ² exp(−d / l²)`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{to_distributions, Distribution, FeatureConfig, FeatureDistributions};
use crate::grammar::ExprTree;
use crate::linalg::Matrix;
use crate::scalar::{Mass, Scalar};

/// Total variation distance between two normalized distributions.
pub fn total_variation<K: Ord, W: Mass>(a: &Distribution<K, W>, b: &Distribution<K, W>) -> Result<W> {
    check_normalized(a)?;
    check_normalized(b)?;
    Ok(tv_unchecked(a, b))
}

fn check_normalized<K: Ord, W: Mass>(d: &Distribution<K, W>) -> Result<()> {
    let total = d.total_mass();
    if (total.clone() - W::one()).abs() > W::normalization_tolerance() {
        return Err(Error::NotNormalized { sum: format!("{total:?}") });
    }
    Ok(())
}

fn tv_unchecked<K: Ord, W: Mass>(a: &Distribution<K, W>, b: &Distribution<K, W>) -> W {
    let (xa, xb) = (a.entries(), b.entries());
    let (mut i, mut j) = (0, 0);
    let mut acc = W::zero();
    while i < xa.len() || j < xb.len() {
        let ord = match (xa.get(i), xb.get(j)) {
            (Some((ka, _)), Some((kb, _))) => ka.cmp(kb),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, _) => std::cmp::Ordering::Greater,
        };
        match ord {
            std::cmp::Ordering::Less => {
                acc = acc + xa[i].1.abs();
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                acc = acc + xb[j].1.abs();
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                acc = acc + (xa[i].1.clone() - xb[j].1.clone()).abs();
                i += 1;
                j += 1;
            }
        }
    }
    acc * W::half()
}

/// Convex weights of the base, path and subtree terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceWeights<W> {
    weights: [W; 3],
}

impl<W: Mass> DistanceWeights<W> {
    pub fn new(base: W, paths: W, subtrees: W) -> Result<Self> {
        let weights = [base, paths, subtrees];
        if weights.iter().any(|w| w.is_negative()) {
            return Err(Error::InvalidWeights(format!("negative weight in {weights:?}")));
        }
        let total = weights.iter().fold(W::zero(), |acc, w| acc + w.clone());
        if (total - W::one()).abs() > W::normalization_tolerance() {
            return Err(Error::InvalidWeights(format!("weights {weights:?} do not sum to 1")));
        }
        Ok(Self { weights })
    }

    pub fn uniform() -> Self {
        let third = W::ratio(1, 3);
        Self { weights: [third.clone(), third.clone(), third] }
    }

    pub fn as_array(&self) -> &[W; 3] {
        &self.weights
    }
}

/// Per-pair distance terms: summed per-dimension base TV, path TV, subtree TV.
pub fn distance_components<W: Mass>(a: &FeatureDistributions<W>, b: &FeatureDistributions<W>) -> Result<[W; 3]> {
    if a.base.len() != b.base.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} base distributions", a.base.len(), b.base.len())));
    }
    let mut base = W::zero();
    for (x, y) in a.base.iter().zip(&b.base) {
        base = base + total_variation(x, y)?;
    }
    Ok([base, total_variation(&a.paths, &b.paths)?, total_variation(&a.subtrees, &b.subtrees)?])
}

pub fn sot_distance<W: Mass>(a: &FeatureDistributions<W>, b: &FeatureDistributions<W>, weights: &DistanceWeights<W>) -> Result<W> {
    let c = distance_components(a, b)?;
    Ok(combine(&c, weights))
}

fn combine<W: Mass>(components: &[W; 3], weights: &DistanceWeights<W>) -> W {
    components
        .iter()
        .zip(weights.as_array())
        .fold(W::zero(), |acc, (c, w)| acc + c.clone() * w.clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelKernelParams<T> {
    pub variance: T,
    /// The squared lengthscale `l²`; the distance is divided by this directly.
    pub lengthscale_sq: T,
    pub weights: DistanceWeights<T>,
}

impl<T: Scalar + Mass> KernelKernelParams<T> {
    pub fn new(variance: T, lengthscale_sq: T, weights: DistanceWeights<T>) -> Result<Self> {
        if !(variance > T::zero()) || !(lengthscale_sq > T::zero()) {
            return Err(Error::Config(format!("kernel-kernel needs positive variance and lengthscale, got {variance}, {lengthscale_sq}")));
        }
        Ok(Self { variance, lengthscale_sq, weights })
    }

    /// Kernel value for a precomputed distance.
    #[inline]
    pub fn from_distance(&self, d: T) -> T {
        self.variance * (-d / self.lengthscale_sq).exp()
    }
}

pub fn kernel_kernel<T: Scalar + Mass>(a: &ExprTree, b: &ExprTree, params: &KernelKernelParams<T>, config: &FeatureConfig) -> Result<T> {
    let fa = to_distributions::<T>(a, config)?;
    let fb = to_distributions::<T>(b, config)?;
    Ok(params.from_distance(sot_distance(&fa, &fb, &params.weights)?))
}

/// Feature distributions memoized by canonical hash. Safe for concurrent
/// readers; insertions take a short write lock.
#[derive(Debug)]
pub struct FeatureCache<W> {
    config: FeatureConfig,
    entries: RwLock<HashMap<u64, Arc<FeatureDistributions<W>>>>,
}

impl<W: Mass> FeatureCache<W> {
    pub fn new(config: FeatureConfig) -> Self {
        Self { config, entries: RwLock::new(HashMap::new()) }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn get(&self, tree: &ExprTree) -> Result<Arc<FeatureDistributions<W>>> {
        let key = tree.canonical_hash();
        if let Some(f) = self.entries.read().expect("feature cache poisoned").get(&key) {
            return Ok(Arc::clone(f));
        }
        let f = Arc::new(to_distributions(tree, &self.config)?);
        let mut w = self.entries.write().expect("feature cache poisoned");
        Ok(Arc::clone(w.entry(key).or_insert(f)))
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("feature cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The three `n×m` component matrices between two lists of trees.
pub fn component_matrices<T: Scalar + Mass>(rows: &[ExprTree], cols: &[ExprTree], cache: &FeatureCache<T>) -> Result<[Matrix<T>; 3]> {
    let fr = rows.iter().map(|t| cache.get(t)).collect::<Result<Vec<_>>>()?;
    let fc = cols.iter().map(|t| cache.get(t)).collect::<Result<Vec<_>>>()?;
    let mut out = [Matrix::zeros(rows.len(), cols.len()), Matrix::zeros(rows.len(), cols.len()), Matrix::zeros(rows.len(), cols.len())];
    for (i, a) in fr.iter().enumerate() {
        for (j, b) in fc.iter().enumerate() {
            let c = distance_components(a, b)?;
            for k in 0..3 {
                out[k][(i, j)] = c[k];
            }
        }
    }
    Ok(out)
}

/// Symmetric component matrices of one list of trees; the diagonal is zero
/// and the upper triangle mirrors the lower exactly.
pub fn symmetric_component_matrices<T: Scalar + Mass>(trees: &[ExprTree], cache: &FeatureCache<T>) -> Result<[Matrix<T>; 3]> {
    let n = trees.len();
    let f = trees.iter().map(|t| cache.get(t)).collect::<Result<Vec<_>>>()?;
    let mut out = [Matrix::zeros(n, n), Matrix::zeros(n, n), Matrix::zeros(n, n)];
    for i in 0..n {
        for j in 0..i {
            let c = distance_components(&f[i], &f[j])?;
            for k in 0..3 {
                out[k][(i, j)] = c[k];
                out[k][(j, i)] = c[k];
            }
        }
    }
    Ok(out)
}

/// Kernel matrix from precomputed component matrices.
pub fn kernel_from_components<T: Scalar + Mass>(components: &[Matrix<T>; 3], params: &KernelKernelParams<T>) -> Matrix<T> {
    let w = params.weights.as_array();
    let (r, c) = (components[0].rows(), components[0].cols());
    Matrix::from_fn(r, c, |i, j| {
        let d = w[0] * components[0][(i, j)] + w[1] * components[1][(i, j)] + w[2] * components[2][(i, j)];
        params.from_distance(d)
    })
}

pub fn gram_matrix<T: Scalar + Mass>(trees: &[ExprTree], params: &KernelKernelParams<T>, cache: &FeatureCache<T>) -> Result<Matrix<T>> {
    let comps = symmetric_component_matrices(trees, cache)?;
    Ok(kernel_from_components(&comps, params))
}
