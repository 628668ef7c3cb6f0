//! The Gaussian process over kernel structures.
//!
//! Observed normalized log-evidences `g(t)` are modelled as
//! `g ~ GP(c, K_SOT) + N(0, σ_g²)`. Hyperparameters are fitted by maximizing
//! the marginal likelihood; the distance weights live on the simplex through
//! `α_i = sigmoid(α̃_i) / Σ_j sigmoid(α̃_j)`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::features::FeatureDistributions;
use crate::grammar::ExprTree;
use crate::linalg::{dot, Cholesky, Matrix};
use crate::optim::{minimize, LbfgsConfig, Objective};
use crate::scalar::{lit, sigmoid, softplus, softplus_inv, Mass, Scalar};
use crate::sot::{distance_components, DistanceWeights, FeatureCache, KernelKernelParams};

/// Lower bound of the meta-noise variance.
pub const META_NOISE_FLOOR: f64 = 1e-6;

/// Number of unconstrained meta hyperparameters.
pub const META_DIM: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaHyperparams<T> {
    /// Constant prior mean `c`.
    pub mean: T,
    pub variance: T,
    pub lengthscale_sq: T,
    pub weight_logits: [T; 3],
    pub noise: T,
}

impl<T: Scalar + Mass> MetaHyperparams<T> {
    /// A data-scaled starting point: `c` at the sample mean, `σ²` at the
    /// sample variance, equal weights.
    pub fn initial(g: &[T]) -> Self {
        let (m, v) = mean_var(g);
        let v = v.max(lit(1e-3));
        Self {
            mean: m,
            variance: v,
            lengthscale_sq: T::one(),
            weight_logits: [T::zero(); 3],
            noise: (v * lit(0.01)).max(lit(1e-4)),
        }
    }

    /// Simplex weights `α`.
    pub fn weights(&self) -> [T; 3] {
        simplex(&self.weight_logits).0
    }

    pub fn kernel_params(&self) -> Result<KernelKernelParams<T>> {
        let [a, b, c] = self.weights();
        KernelKernelParams::new(self.variance, self.lengthscale_sq, DistanceWeights::new(a, b, c)?)
    }

    /// `[c, u(σ²), u(l²), α̃₁, α̃₂, α̃₃, u(σ_g² − floor)]`.
    pub fn to_unconstrained(&self) -> [T; META_DIM] {
        let floor: T = lit(META_NOISE_FLOOR);
        let [a, b, c] = self.weight_logits;
        [
            self.mean,
            softplus_inv(self.variance),
            softplus_inv(self.lengthscale_sq),
            a,
            b,
            c,
            softplus_inv((self.noise - floor).max(lit(1e-12))),
        ]
    }

    pub fn from_unconstrained(v: &[T]) -> Self {
        Self {
            mean: v[0],
            variance: softplus(v[1]),
            lengthscale_sq: softplus(v[2]),
            weight_logits: [v[3], v[4], v[5]],
            noise: lit::<T>(META_NOISE_FLOOR) + softplus(v[6]),
        }
    }
}

fn mean_var<T: Scalar>(g: &[T]) -> (T, T) {
    if g.is_empty() {
        return (T::zero(), T::one());
    }
    let n: T = lit(g.len() as f64);
    let m = g.iter().copied().sum::<T>() / n;
    let v = g.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / n;
    (m, v)
}

/// Simplex weights and the sigmoids they came from.
fn simplex<T: Scalar>(logits: &[T; 3]) -> ([T; 3], [T; 3], T) {
    let s = logits.map(sigmoid);
    let total = s[0] + s[1] + s[2];
    (s.map(|x| x / total), s, total)
}

/// Observed `(tree, g)` pairs with their pairwise distance components.
#[derive(Clone, Debug)]
pub struct MetaDataset<T> {
    cache: Arc<FeatureCache<T>>,
    trees: Vec<ExprTree>,
    features: Vec<Arc<FeatureDistributions<T>>>,
    g: Vec<T>,
    /// `components[i][j]` for `j < i`.
    components: Vec<Vec<[T; 3]>>,
}

impl<T: Scalar + Mass> MetaDataset<T> {
    pub fn new(cache: Arc<FeatureCache<T>>) -> Self {
        Self { cache, trees: Vec::new(), features: Vec::new(), g: Vec::new(), components: Vec::new() }
    }

    pub fn from_pairs(cache: Arc<FeatureCache<T>>, pairs: impl IntoIterator<Item = (ExprTree, T)>) -> Result<Self> {
        let mut md = Self::new(cache);
        for (t, g) in pairs {
            md.push(t, g)?;
        }
        Ok(md)
    }

    pub fn push(&mut self, tree: ExprTree, g: T) -> Result<()> {
        if !g.is_finite() {
            return Err(Error::NonFinite("meta-dataset target"));
        }
        let f = self.cache.get(&tree)?;
        let row = self.features.iter().map(|o| distance_components(&f, o)).collect::<Result<Vec<_>>>()?;
        self.components.push(row);
        self.features.push(f);
        self.trees.push(tree);
        self.g.push(g);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn trees(&self) -> &[ExprTree] {
        &self.trees
    }

    pub fn targets(&self) -> &[T] {
        &self.g
    }

    pub fn cache(&self) -> &Arc<FeatureCache<T>> {
        &self.cache
    }

    pub fn contains(&self, tree: &ExprTree) -> bool {
        let h = tree.canonical_hash();
        self.trees.iter().any(|t| t.canonical_hash() == h)
    }

    /// The three symmetric distance-component matrices.
    pub fn component_matrices(&self) -> [Matrix<T>; 3] {
        let n = self.len();
        let mut out = [Matrix::zeros(n, n), Matrix::zeros(n, n), Matrix::zeros(n, n)];
        for (i, row) in self.components.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                for k in 0..3 {
                    out[k][(i, j)] = c[k];
                    out[k][(j, i)] = c[k];
                }
            }
        }
        out
    }
}

/// Negative log marginal likelihood of the meta-GP over the unconstrained
/// vector of [`MetaHyperparams::to_unconstrained`].
pub struct MetaObjective<'a, T> {
    components: &'a [Matrix<T>; 3],
    g: &'a [T],
}

impl<'a, T: Scalar + Mass> MetaObjective<'a, T> {
    pub fn new(components: &'a [Matrix<T>; 3], g: &'a [T]) -> Self {
        Self { components, g }
    }

    fn eval(&self, v: &[T]) -> Option<(T, Vec<T>)> {
        let h = MetaHyperparams::from_unconstrained(v);
        let (alpha, s, total) = simplex(&h.weight_logits);
        let n = self.g.len();
        let (sf, l2) = (h.variance, h.lengthscale_sq);
        let [d0, d1, d2] = self.components;
        let dist = Matrix::from_fn(n, n, |i, j| alpha[0] * d0[(i, j)] + alpha[1] * d1[(i, j)] + alpha[2] * d2[(i, j)]);
        let e = Matrix::from_fn(n, n, |i, j| (-dist[(i, j)] / l2).exp());
        let mut k = Matrix::from_fn(n, n, |i, j| sf * e[(i, j)]);
        k.add_diagonal(h.noise);
        let chol = Cholesky::with_jitter(&k).ok()?;
        let r: Vec<T> = self.g.iter().map(|&x| x - h.mean).collect();
        let beta = chol.solve(&r);
        let half: T = lit(0.5);
        let nll = half * dot(&r, &beta) + half * chol.log_det() + half * lit::<T>(n as f64) * (T::PI() + T::PI()).ln();

        // dNLL/dθ = ½ Σᵢⱼ Wᵢⱼ (dK/dθ)ᵢⱼ with W = K⁻¹ − ββᵀ
        let kinv = chol.inverse();
        let w = Matrix::from_fn(n, n, |i, j| kinv[(i, j)] - beta[i] * beta[j]);
        let contract = |f: &dyn Fn(usize, usize) -> T| -> T {
            let mut acc = T::zero();
            for i in 0..n {
                for j in 0..n {
                    acc += w[(i, j)] * f(i, j);
                }
            }
            half * acc
        };
        let d_var = contract(&|i, j| e[(i, j)]);
        let d_l2 = contract(&|i, j| sf * e[(i, j)] * dist[(i, j)] / (l2 * l2));
        let d_alpha: [T; 3] = std::array::from_fn(|c| contract(&|i, j| -sf * e[(i, j)] * self.components[c][(i, j)] / l2));
        let d_noise = half * w.diagonal().into_iter().sum::<T>();
        let d_mean = -beta.iter().copied().sum::<T>();

        let mut grad = vec![T::zero(); META_DIM];
        grad[0] = d_mean;
        grad[1] = d_var * sigmoid(v[1]);
        grad[2] = d_l2 * sigmoid(v[2]);
        for j in 0..3 {
            let ds = s[j] * (T::one() - s[j]) / total;
            grad[3 + j] = (0..3).map(|kk| {
                let delta = if kk == j { T::one() } else { T::zero() };
                d_alpha[kk] * (delta - alpha[kk]) * ds
            }).sum();
        }
        grad[6] = d_noise * sigmoid(v[6]);
        Some((nll, grad))
    }
}

impl<T: Scalar + Mass> Objective<T> for MetaObjective<'_, T> {
    fn dim(&self) -> usize {
        META_DIM
    }

    fn value_grad(&self, v: &[T]) -> (T, Vec<T>) {
        match self.eval(v) {
            Some((f, g)) if f.is_finite() && g.iter().all(|x| x.is_finite()) => (f, g),
            _ => (T::infinity(), vec![T::zero(); META_DIM]),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MetaFit<T> {
    pub hyperparams: MetaHyperparams<T>,
    pub nll: T,
    pub init_nll: T,
    /// Set when every optimization run failed and `init` was returned.
    pub warning: Option<String>,
}

pub fn meta_nll<T: Scalar + Mass>(md: &MetaDataset<T>, hyp: &MetaHyperparams<T>) -> T {
    let comps = md.component_matrices();
    MetaObjective::new(&comps, md.targets()).value_grad(&hyp.to_unconstrained()).0
}

/// Maximizes the meta marginal likelihood. The first of `restarts` runs is
/// warm-started from `init`, the rest from random points scaled to the data.
/// The result is never worse than `init`.
pub fn fit_meta_hyperparams<T: Scalar + Mass, R: Rng + ?Sized>(
    md: &MetaDataset<T>,
    init: &MetaHyperparams<T>,
    restarts: usize,
    rng: &mut R,
) -> Result<MetaFit<T>> {
    if md.len() < 2 {
        return Err(Error::Config(format!("meta-GP fitting needs at least 2 observations, got {}", md.len())));
    }
    let comps = md.component_matrices();
    let objective = MetaObjective::new(&comps, md.targets());
    let cfg = LbfgsConfig { max_iters: 200, grad_tol: 1e-6, ..LbfgsConfig::default() };
    let init_v = init.to_unconstrained();
    let init_nll = objective.value_grad(&init_v).0;
    let (gm, gv) = mean_var(md.targets());
    let gs = gv.sqrt().max(lit(1e-3));
    let mut best_v = init_v.to_vec();
    let mut best = init_nll;
    let mut failures = 0;
    for r in 0..restarts.max(1) {
        let start: Vec<T> = if r == 0 { init_v.to_vec() } else { random_start(gm, gs, rng).to_vec() };
        match minimize(&objective, &start, &cfg) {
            Some(m) if m.value.is_finite() => {
                if !(best <= m.value) {
                    best = m.value;
                    best_v = m.x;
                }
            }
            _ => failures += 1,
        }
    }
    let warning = (failures == restarts.max(1)).then(|| format!("all {failures} meta-GP fits failed; keeping the initial hyperparameters"));
    Ok(MetaFit { hyperparams: MetaHyperparams::from_unconstrained(&best_v), nll: best, init_nll, warning })
}

fn random_start<T: Scalar + Mass, R: Rng + ?Sized>(g_mean: T, g_std: T, rng: &mut R) -> [T; META_DIM] {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut z = || lit::<T>(std_normal.sample(rng));
    let var = g_std * g_std * z().exp();
    let l2: T = lit::<T>(10.0).powf(z() * lit(0.75) - lit(0.5));
    let noise = g_std * g_std * lit::<T>(10.0).powf(z() * lit(0.5) - lit(2.0));
    let h = MetaHyperparams {
        mean: g_mean + g_std * z(),
        variance: var,
        lengthscale_sq: l2,
        weight_logits: [z(), z(), z()],
        noise: noise + lit(META_NOISE_FLOOR),
    };
    h.to_unconstrained()
}

/// A fitted meta-GP ready for batched queries.
#[derive(Clone, Debug)]
pub struct MetaPosterior<T> {
    hyp: MetaHyperparams<T>,
    params: KernelKernelParams<T>,
    cache: Arc<FeatureCache<T>>,
    features: Vec<Arc<FeatureDistributions<T>>>,
    chol: Cholesky<T>,
    beta: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaPrediction<T> {
    pub mean: Vec<T>,
    /// Latent variance, clamped at zero.
    pub variance: Vec<T>,
}

impl<T: Scalar + Mass> MetaPosterior<T> {
    pub fn new(md: &MetaDataset<T>, hyp: &MetaHyperparams<T>) -> Result<Self> {
        let params = hyp.kernel_params()?;
        let comps = md.component_matrices();
        let w = params.weights.as_array();
        let n = md.len();
        let mut k = Matrix::from_fn(n, n, |i, j| {
            params.from_distance(w[0] * comps[0][(i, j)] + w[1] * comps[1][(i, j)] + w[2] * comps[2][(i, j)])
        });
        k.add_diagonal(hyp.noise);
        let chol = Cholesky::with_jitter(&k)?;
        let r: Vec<T> = md.targets().iter().map(|&x| x - hyp.mean).collect();
        let beta = chol.solve(&r);
        Ok(Self { hyp: hyp.clone(), params, cache: Arc::clone(md.cache()), features: md.features.clone(), chol, beta })
    }

    pub fn hyperparams(&self) -> &MetaHyperparams<T> {
        &self.hyp
    }

    pub fn predict(&self, queries: &[ExprTree]) -> Result<MetaPrediction<T>> {
        let mut mean = Vec::with_capacity(queries.len());
        let mut variance = Vec::with_capacity(queries.len());
        for q in queries {
            let (m, v) = self.predict_one(q)?;
            mean.push(m);
            variance.push(v);
        }
        Ok(MetaPrediction { mean, variance })
    }

    pub fn predict_one(&self, query: &ExprTree) -> Result<(T, T)> {
        let fq = self.cache.get(query)?;
        let w = self.params.weights.as_array();
        let ks = self
            .features
            .iter()
            .map(|f| {
                let c = distance_components(&fq, f)?;
                Ok(self.params.from_distance(w[0] * c[0] + w[1] * c[1] + w[2] * c[2]))
            })
            .collect::<Result<Vec<T>>>()?;
        let mean = self.hyp.mean + dot(&ks, &self.beta);
        let v = self.chol.solve_lower(&ks);
        let var = (self.params.variance - dot(&v, &v)).max(T::zero());
        Ok((mean, var))
    }
}

pub fn meta_posterior<T: Scalar + Mass>(md: &MetaDataset<T>, hyp: &MetaHyperparams<T>, queries: &[ExprTree]) -> Result<MetaPrediction<T>> {
    MetaPosterior::new(md, hyp)?.predict(queries)
}

/// Expected improvement over `best` for maximization, without exploration
/// offset.
pub fn expected_improvement<T: Scalar>(mean: T, variance: T, best: T) -> T {
    let diff = mean - best;
    let s = variance.max(T::zero()).sqrt();
    if !(s > T::zero()) {
        return diff.max(T::zero());
    }
    let z = (diff / s).to_f64().unwrap_or(f64::NAN);
    let cdf = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (diff * lit(cdf) + s * lit(pdf)).max(T::zero())
}

pub fn expected_improvement_batch<T: Scalar>(pred: &MetaPrediction<T>, best: T) -> Vec<T> {
    pred.mean.iter().zip(&pred.variance).map(|(&m, &v)| expected_improvement(m, v, best)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trees(src: &[&str]) -> Vec<ExprTree> {
        src.iter().map(|s| s.parse().unwrap()).collect()
    }

    fn dataset(src: &[&str], g: &[f64]) -> MetaDataset<f64> {
        let cache = Arc::new(FeatureCache::new(FeatureConfig::new(1)));
        MetaDataset::from_pairs(cache, trees(src).into_iter().zip(g.iter().copied())).unwrap()
    }

    #[test]
    fn simplex_holds_over_logit_box() {
        for a in [-10.0, -3.0, 0.0, 4.0, 10.0] {
            for b in [-10.0, 0.5, 10.0] {
                let h = MetaHyperparams { mean: 0.0, variance: 1.0, lengthscale_sq: 1.0, weight_logits: [a, b, -a], noise: 0.1 };
                let w = h.weights();
                assert!(w.iter().all(|&x| x >= 0.0));
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unconstrained_roundtrip() {
        let h = MetaHyperparams::<f64> { mean: -0.3, variance: 2.0, lengthscale_sq: 0.4, weight_logits: [0.1, -2.0, 1.0], noise: 0.05 };
        let back = MetaHyperparams::from_unconstrained(&h.to_unconstrained());
        assert!((back.noise - h.noise).abs() < 1e-12);
        assert!((back.variance - h.variance).abs() < 1e-12);
        assert_eq!(back.mean, h.mean);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let md = dataset(&["SE0", "LIN0", "SE0 + LIN0", "PER0 * SE0", "(SE0 * LIN0) + RQ0"], &[0.1, -0.4, 0.3, 0.9, 0.2]);
        let comps = md.component_matrices();
        let obj = MetaObjective::new(&comps, md.targets());
        let v = [0.2, 0.3, -0.5, 0.4, -1.0, 0.8, -2.0];
        let (_, g) = obj.value_grad(&v);
        for i in 0..META_DIM {
            let h = 1e-6;
            let mut a = v;
            a[i] += h;
            let mut b = v;
            b[i] -= h;
            let fd = (obj.value_grad(&a).0 - obj.value_grad(&b).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn fit_never_worse_than_init() {
        let md = dataset(&["SE0", "LIN0", "SE0 + LIN0", "PER0 * SE0", "(SE0 * LIN0) + RQ0", "RQ0"], &[0.1, -0.4, 0.3, 0.9, 0.2, 0.15]);
        let init = MetaHyperparams::initial(md.targets());
        let fit = fit_meta_hyperparams(&md, &init, 3, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(fit.nll <= fit.init_nll);
        assert!((fit.init_nll - meta_nll(&md, &init)).abs() < 1e-12);
        assert!((fit.hyperparams.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let again = fit_meta_hyperparams(&md, &init, 3, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(fit.hyperparams, again.hyperparams);
    }

    #[test]
    fn fit_needs_two_points() {
        let md = dataset(&["SE0"], &[0.1]);
        let init = MetaHyperparams::initial(md.targets());
        assert!(fit_meta_hyperparams(&md, &init, 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn interpolates_with_tiny_noise() {
        let md = dataset(&["SE0", "LIN0", "PER0 * SE0"], &[0.1, -0.4, 0.9]);
        let h = MetaHyperparams { mean: 0.0, variance: 1.0, lengthscale_sq: 0.5, weight_logits: [0.0; 3], noise: 1e-6 };
        let p = meta_posterior(&md, &h, &trees(&["LIN0", "SE0 * PER0"])).unwrap();
        assert!((p.mean[0] + 0.4).abs() < 1e-4);
        assert!((p.mean[1] - 0.9).abs() < 1e-4);
        assert!(p.variance[0] < 1e-4);
    }

    #[test]
    fn distant_query_reverts_to_prior() {
        let md = dataset(&["SE0", "SE0 + SE0"], &[0.1, 0.5]);
        let h = MetaHyperparams { mean: 0.25, variance: 1.3, lengthscale_sq: 1e-3, weight_logits: [0.0; 3], noise: 0.01 };
        let p = meta_posterior(&md, &h, &trees(&["LIN0 * PER0"])).unwrap();
        assert!((p.mean[0] - 0.25).abs() < 1e-12);
        assert!((p.variance[0] - 1.3).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_targets() {
        let cache = Arc::new(FeatureCache::new(FeatureConfig::new(1)));
        let mut md = MetaDataset::new(cache);
        assert!(md.push("SE0".parse().unwrap(), f64::NAN).is_err());
        assert!(md.is_empty());
    }

    #[test]
    fn ei_edge_cases() {
        assert_eq!(expected_improvement(0.5, 0.0, 0.5), 0.0);
        assert_eq!(expected_improvement(0.7, 0.0, 0.5), 0.7 - 0.5);
        assert_eq!(expected_improvement(0.2, 0.0, 0.5), 0.0);
        // μ = g*: EI = s φ(0)
        let e = expected_improvement(1.0, 4.0, 1.0);
        assert!((e - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        let mut prev = 0.0;
        for i in -50..50 {
            let e = expected_improvement(i as f64 * 0.1, 0.3, 0.0);
            assert!(e >= prev);
            prev = e;
        }
    }
}
