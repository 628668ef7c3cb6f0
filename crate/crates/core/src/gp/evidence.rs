//! MAP estimation and the Laplace approximation of the log model evidence.
//!
//! Both work in the unconstrained parameterization `θ = softplus(u)`, where
//! the log-posterior includes the log-Jacobian of the map, so the Laplace
//! integral over `u` equals the evidence integral over `θ`.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::likelihood::{log_unnormalized_posterior, NegLogPosterior};
use crate::gp::params::{HyperParams, ParamLayout, PriorConfig};
use crate::gp::Dataset;
use crate::grammar::ExprTree;
use crate::linalg::{symmetric_eigenvalues, Matrix};
use crate::optim::{minimize, LbfgsConfig, Objective};
use crate::scalar::{lit, softplus_inv, Scalar};

/// Eigenvalues of the Hessian are clamped below at this value before the
/// log-determinant, so flat directions stay finite.
pub const HESSIAN_EIGENVALUE_FLOOR: f64 = 1e-6;

/// Relative step of the central finite-difference Hessian.
pub const HESSIAN_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub restarts: usize,
    pub priors: PriorConfig,
    pub lbfgs: LbfgsConfig,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self { restarts: 10, priors: PriorConfig::default(), lbfgs: LbfgsConfig { grad_tol: 1e-5, ..LbfgsConfig::default() } }
    }
}

#[derive(Clone, Debug)]
pub struct MapEstimate<T> {
    pub params: HyperParams<T>,
    /// Log marginal likelihood plus log prior at the mode, constrained space.
    pub log_posterior: T,
    /// The optimized objective: `log_posterior` plus the log-Jacobian.
    pub unconstrained_log_posterior: T,
    pub unconstrained: Vec<T>,
    pub grad_sup_norm: T,
    /// Best objective after each restart; non-decreasing.
    pub best_by_restart: Vec<T>,
}

/// Best of `cfg.restarts` L-BFGS runs from prior draws.
pub fn map_estimate<T: Scalar, R: Rng + ?Sized>(tree: &ExprTree, data: &Dataset<T>, cfg: &MapConfig, rng: &mut R) -> Result<MapEstimate<T>> {
    if cfg.restarts == 0 {
        return Err(Error::Config("MAP estimation needs at least one restart".into()));
    }
    let layout = ParamLayout::for_tree(tree, &cfg.priors);
    let objective = NegLogPosterior::new(tree, &layout, data)?;
    let mut best: Option<crate::optim::Minimum<T>> = None;
    let mut failures = Vec::new();
    let mut best_by_restart = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let u0: Vec<T> = layout.sample_prior(rng).into_iter().map(|v| softplus_inv(lit::<T>(v))).collect();
        match minimize(&objective, &u0, &cfg.lbfgs) {
            Some(m) if m.value.is_finite() => {
                if best.as_ref().is_none_or(|b| m.value < b.value) {
                    best = Some(m);
                }
            }
            Some(_) => failures.push(format!("restart {r}: non-finite terminal value")),
            None => failures.push(format!("restart {r}: objective not finite at the initial point")),
        }
        best_by_restart.push(best.as_ref().map_or(T::neg_infinity(), |b| -b.value));
    }
    let best = best.ok_or(Error::AllRestartsFailed { restarts: cfg.restarts, failures })?;
    let params = HyperParams::from_unconstrained(layout, &best.x)?;
    let log_posterior = log_unnormalized_posterior(tree, &params, data)?;
    Ok(MapEstimate {
        grad_sup_norm: best.grad_sup_norm(),
        params,
        log_posterior,
        unconstrained_log_posterior: -best.value,
        unconstrained: best.x,
        best_by_restart,
    })
}

/// Terms of a Laplace approximation around a mode.
#[derive(Clone, Debug)]
pub struct LaplaceTerms<T> {
    /// Log joint density at the mode.
    pub log_joint: T,
    /// Log-determinant of the clamped negative Hessian.
    pub log_det: T,
    pub dim: usize,
    pub eigenvalues: Vec<T>,
    pub log_evidence: T,
}

/// Laplace approximation of `log ∫ exp(−f(u)) du` for an objective `f`
/// (a negative log joint density) at its minimizer `mode`.
pub fn laplace_approximation<T: Scalar, O: Objective<T> + ?Sized>(objective: &O, mode: &[T]) -> Result<LaplaceTerms<T>> {
    let d = objective.dim();
    let (f, _) = objective.value_grad(mode);
    if !f.is_finite() {
        return Err(Error::NonFinite("objective at the Laplace mode"));
    }
    let mut h = Matrix::zeros(d, d);
    for i in 0..d {
        let step = lit::<T>(HESSIAN_STEP) * (T::one() + mode[i].abs());
        let mut up = mode.to_vec();
        up[i] += step;
        let mut dn = mode.to_vec();
        dn[i] -= step;
        let (fu, gu) = objective.value_grad(&up);
        let (fd, gd) = objective.value_grad(&dn);
        if !fu.is_finite() || !fd.is_finite() {
            return Err(Error::NonFinite("Hessian probe"));
        }
        for j in 0..d {
            h[(j, i)] = (gu[j] - gd[j]) / (step + step);
        }
    }
    let half: T = lit(0.5);
    let sym = Matrix::from_fn(d, d, |i, j| half * (h[(i, j)] + h[(j, i)]));
    if !sym.is_finite() {
        return Err(Error::NonFinite("Hessian"));
    }
    let eigenvalues = symmetric_eigenvalues(&sym);
    let floor: T = lit(HESSIAN_EIGENVALUE_FLOOR);
    let log_det = eigenvalues.iter().map(|&l| l.max(floor).ln()).sum::<T>();
    let log_joint = -f;
    let log_evidence = log_joint - half * log_det + half * lit::<T>(d as f64) * (T::PI() + T::PI()).ln();
    Ok(LaplaceTerms { log_joint, log_det, dim: d, eigenvalues, log_evidence })
}

/// Log-evidence of a tree with its MAP hyperparameters.
#[derive(Clone, Debug, Serialize)]
pub struct EvidenceResult<T> {
    /// Normalized log-evidence `raw / N`.
    pub g: T,
    pub raw: T,
    pub map_params: HyperParams<T>,
    pub map_log_posterior: T,
    pub n: usize,
    pub wall_seconds: f64,
}

pub fn laplace_log_evidence<T: Scalar, R: Rng + ?Sized>(tree: &ExprTree, data: &Dataset<T>, cfg: &MapConfig, rng: &mut R) -> Result<EvidenceResult<T>> {
    let start = Instant::now();
    let map = map_estimate(tree, data, cfg, rng)?;
    let objective = NegLogPosterior::new(tree, map.params.layout(), data)?;
    let terms = laplace_approximation(&objective, &map.unconstrained)?;
    let n = data.len();
    Ok(EvidenceResult {
        g: terms.log_evidence / lit(n as f64),
        raw: terms.log_evidence,
        map_params: map.params,
        map_log_posterior: map.log_posterior,
        n,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_objective_is_exact() {
        // ∫ exp(−½ uᵀAu − c) du = exp(−c) (2π)^{d/2} det(A)^{−½}
        let a = [[2.0, 0.3], [0.3, 0.5]];
        let c = 1.25;
        let obj = (2usize, |u: &[f64]| {
            let au = [a[0][0] * u[0] + a[0][1] * u[1], a[1][0] * u[0] + a[1][1] * u[1]];
            (0.5 * (u[0] * au[0] + u[1] * au[1]) + c, au.to_vec())
        });
        let t = laplace_approximation(&obj, &[0.0, 0.0]).unwrap();
        let det: f64 = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let want = -c + (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln();
        assert!((t.log_evidence - want).abs() < 1e-8);
    }

    #[test]
    fn zero_dimensional_case() {
        let obj = (0usize, |_: &[f64]| (3.5, vec![]));
        let t = laplace_approximation(&obj, &[]).unwrap();
        assert_eq!(t.log_evidence, -3.5);
        assert_eq!(t.log_det, 0.0);
    }

    #[test]
    fn flat_directions_are_clamped() {
        let obj = (1usize, |_: &[f64]| (0.0, vec![0.0]));
        let t = laplace_approximation(&obj, &[0.0]).unwrap();
        assert!((t.log_det - HESSIAN_EIGENVALUE_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn nan_hessian_is_an_error() {
        let obj = (1usize, |u: &[f64]| (u[0] * u[0], vec![if u[0] == 0.0 { 0.0 } else { f64::NAN }]));
        assert!(matches!(laplace_approximation(&obj, &[0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn restarts_are_monotone_and_deterministic() {
        let t: ExprTree = "SE0 + LIN0".parse().unwrap();
        let xs: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x).sin() + 0.5 * x).collect();
        let data = Dataset::new(Matrix::from_vec(12, 1, xs), ys).unwrap();
        let cfg = MapConfig { restarts: 4, ..MapConfig::default() };
        let a = map_estimate(&t, &data, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = map_estimate(&t, &data, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.best_by_restart.windows(2).all(|w| w[1] >= w[0]));
        assert!(a.grad_sup_norm <= 1e-3, "{}", a.grad_sup_norm);
        let e = laplace_log_evidence(&t, &data, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((e.g - e.raw / 12.0).abs() < 1e-15);
    }

    #[test]
    fn zero_restarts_rejected() {
        let t: ExprTree = "SE0".parse().unwrap();
        let data = Dataset::new(Matrix::from_vec(2, 1, vec![0.0, 1.0]), vec![1.0, -1.0]).unwrap();
        let cfg = MapConfig { restarts: 0, ..MapConfig::default() };
        assert!(map_estimate(&t, &data, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
