//! Gaussian-process regression with grammar kernels.

mod evidence;
mod kernel;
mod likelihood;
mod params;

pub use evidence::{
    laplace_approximation, laplace_log_evidence, map_estimate, EvidenceResult, LaplaceTerms, MapConfig, MapEstimate,
    HESSIAN_EIGENVALUE_FLOOR, HESSIAN_STEP,
};
pub use kernel::{base_kernel, eval_composite_kernel, kernel_diagonal, kernel_with_gradients, KernelGradients};
pub use likelihood::{
    log_marginal_likelihood, log_unnormalized_posterior, log_unnormalized_posterior_unconstrained, posterior_predict, NegLogPosterior,
    Prediction,
};
pub use params::{dsoftplus, log_jacobian, GammaPrior, HyperParams, ParamKind, ParamLayout, ParamSlot, PriorConfig};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Regression data: `N×D` inputs and `N` targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    x: Matrix<T>,
    y: Vec<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Matrix<T>, y: Vec<T>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Data(format!("{} input rows but {} targets", x.rows(), y.len())));
        }
        if y.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in dataset".into()));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &Matrix<T> {
        &self.x
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dimensions(&self) -> usize {
        self.x.cols()
    }

    /// The rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let d = self.dimensions();
        let mut xs = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            xs.extend_from_slice(self.x.row(i));
        }
        Self::new(Matrix::from_vec(idx.len(), d, xs), idx.iter().map(|&i| self.y[i]).collect())
    }
}
