//! Gaussian marginal likelihood, log-posterior objective and prediction.

use crate::error::Result;
use crate::gp::kernel::{eval_composite_kernel, kernel_diagonal, packed_kernel_with_gradients};
use crate::gp::params::{dsoftplus, log_jacobian, HyperParams, ParamLayout};
use crate::gp::Dataset;
use crate::grammar::ExprTree;
use crate::linalg::{dot, Cholesky, Matrix};
use crate::optim::Objective;
use crate::scalar::{lit, sigmoid, softplus, Scalar};

fn factor_train<T: Scalar>(tree: &ExprTree, params: &HyperParams<T>, data: &Dataset<T>) -> Result<Cholesky<T>> {
    let mut k = eval_composite_kernel(tree, params, data.x(), data.x())?;
    k.add_diagonal(params.noise());
    Cholesky::with_jitter(&k)
}

fn gaussian_log_density<T: Scalar>(chol: &Cholesky<T>, y: &[T]) -> T {
    let alpha = chol.solve(y);
    let n: T = lit(y.len() as f64);
    let half: T = lit(0.5);
    -half * dot(y, &alpha) - half * chol.log_det() - half * n * (T::PI() + T::PI()).ln()
}

/// `log N(y; 0, K + σ²I)`.
pub fn log_marginal_likelihood<T: Scalar>(tree: &ExprTree, params: &HyperParams<T>, data: &Dataset<T>) -> Result<T> {
    let chol = factor_train(tree, params, data)?;
    Ok(gaussian_log_density(&chol, data.y()))
}

/// Log marginal likelihood plus the log prior densities, in constrained space.
pub fn log_unnormalized_posterior<T: Scalar>(tree: &ExprTree, params: &HyperParams<T>, data: &Dataset<T>) -> Result<T> {
    Ok(log_marginal_likelihood(tree, params, data)? + params.log_prior())
}

/// The unconstrained-space variant: the constrained value plus the
/// log-Jacobian of `θ = softplus(u)`.
pub fn log_unnormalized_posterior_unconstrained<T: Scalar>(tree: &ExprTree, layout: &ParamLayout, u: &[T], data: &Dataset<T>) -> Result<T> {
    let params = HyperParams::from_unconstrained(layout.clone(), u)?;
    Ok(log_unnormalized_posterior(tree, &params, data)? + log_jacobian(u))
}

/// Negative unconstrained log-posterior with its analytic gradient. Points
/// where the covariance cannot be factorized evaluate to `+∞`.
pub struct NegLogPosterior<'a, T> {
    tree: &'a ExprTree,
    layout: &'a ParamLayout,
    data: &'a Dataset<T>,
}

impl<'a, T: Scalar> NegLogPosterior<'a, T> {
    pub fn new(tree: &'a ExprTree, layout: &'a ParamLayout, data: &'a Dataset<T>) -> Result<Self> {
        layout.check_tree(tree)?;
        Ok(Self { tree, layout, data })
    }

    fn try_value_grad(&self, u: &[T]) -> Result<(T, Vec<T>)> {
        let params = HyperParams::from_unconstrained(self.layout.clone(), u)?;
        let n = self.data.len();
        let kg = packed_kernel_with_gradients(self.tree, &params, self.data.x())?;
        let mut k = kg.value.unpack(n);
        k.add_diagonal(params.noise());
        let chol = Cholesky::with_jitter(&k)?;
        let y = self.data.y();
        let alpha = chol.solve(y);
        let kinv = chol.inverse();
        let half: T = lit(0.5);

        let lml = -half * dot(y, &alpha) - half * chol.log_det() - half * lit::<T>(n as f64) * (T::PI() + T::PI()).ln();

        // W = ααᵀ − K⁻¹, so dL/dθ = ½ Σᵢⱼ Wᵢⱼ (dK/dθ)ᵢⱼ. Over the packed lower
        // triangle, off-diagonal entries count twice.
        let two: T = lit(2.0);
        let mut w = Vec::with_capacity(n * (n + 1) / 2);
        let mut trace_w = T::zero();
        for i in 0..n {
            for j in 0..i {
                w.push(two * (alpha[i] * alpha[j] - kinv[(i, j)]));
            }
            let wii = alpha[i] * alpha[i] - kinv[(i, i)];
            trace_w += wii;
            w.push(wii);
        }
        let mut dtheta: Vec<T> = kg.grads.iter().map(|g| half * dot(&w, &g.0)).collect();
        dtheta.push(half * trace_w);

        let values = params.values();
        let mut lp = lml;
        let mut grad = Vec::with_capacity(u.len());
        for ((slot, (&theta, &ui)), dl) in self.layout.slots().iter().zip(values.iter().zip(u)).zip(dtheta) {
            lp += slot.prior.log_pdf(theta);
            let dtheta_total = dl + slot.prior.dlog_pdf(theta);
            // d/du log sigmoid(u) = sigmoid(−u)
            grad.push(-(dtheta_total * dsoftplus(ui) + sigmoid(-ui)));
        }
        lp += log_jacobian(u);
        Ok((-lp, grad))
    }
}

impl<T: Scalar> Objective<T> for NegLogPosterior<'_, T> {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn value_grad(&self, u: &[T]) -> (T, Vec<T>) {
        if u.iter().any(|&x| !x.is_finite() || !(softplus(x) > T::zero())) {
            return (T::infinity(), vec![T::zero(); u.len()]);
        }
        match self.try_value_grad(u) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => (v, g),
            _ => (T::infinity(), vec![T::zero(); u.len()]),
        }
    }
}

/// Predictive distribution at test inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    pub mean: Vec<T>,
    /// Variance of the latent function, clamped at zero.
    pub latent_variance: Vec<T>,
    pub noise: T,
}

impl<T: Scalar> Prediction<T> {
    /// Variance of a new observation: latent variance plus noise.
    pub fn observed_variance(&self) -> Vec<T> {
        self.latent_variance.iter().map(|&v| v + self.noise).collect()
    }

    pub fn rmse(&self, y: &[T]) -> T {
        assert_eq!(y.len(), self.mean.len());
        let n: T = lit(y.len() as f64);
        (self.mean.iter().zip(y).map(|(&m, &t)| (m - t) * (m - t)).sum::<T>() / n).sqrt()
    }

    /// Average negative log predictive density of `y` under the observation
    /// distribution.
    pub fn mean_nll(&self, y: &[T]) -> T {
        assert_eq!(y.len(), self.mean.len());
        let half: T = lit(0.5);
        let two_pi = T::PI() + T::PI();
        let n: T = lit(y.len() as f64);
        self.mean
            .iter()
            .zip(self.observed_variance())
            .zip(y)
            .map(|((&m, v), &t)| half * (two_pi * v).ln() + (t - m) * (t - m) / (v + v))
            .sum::<T>()
            / n
    }
}

pub fn posterior_predict<T: Scalar>(tree: &ExprTree, params: &HyperParams<T>, data: &Dataset<T>, x_star: &Matrix<T>) -> Result<Prediction<T>> {
    let chol = factor_train(tree, params, data)?;
    let alpha = chol.solve(data.y());
    let ks = eval_composite_kernel(tree, params, x_star, data.x())?;
    let prior = kernel_diagonal(tree, params, x_star)?;
    let mut mean = Vec::with_capacity(x_star.rows());
    let mut latent_variance = Vec::with_capacity(x_star.rows());
    for (i, &kss) in prior.iter().enumerate() {
        let row = ks.row(i);
        mean.push(dot(row, &alpha));
        let v = chol.solve_lower(row);
        latent_variance.push((kss - dot(&v, &v)).max(T::zero()));
    }
    Ok(Prediction { mean, latent_variance, noise: params.noise() })
}
