//! Hyperparameter layout, priors and the positive/unconstrained bijection.
//!
//! Every leaf of a tree owns its own parameters. Slots are laid out in leaf
//! order (left to right), each leaf contributing its family's parameters in a
//! fixed order, and the likelihood noise variance comes last.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::grammar::{BaseKernel, ExprTree, KernelFamily};
use crate::scalar::{lit, log_sigmoid, sigmoid, softplus, softplus_inv, Scalar};

/// Gamma distribution in the shape–rate parameterization,
/// density `∝ x^(shape−1) e^(−rate·x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return Err(Error::Config(format!("Gamma prior needs positive shape and rate, got ({shape}, {rate})")));
        }
        Ok(Self { shape, rate })
    }

    pub fn log_pdf<T: Scalar>(&self, x: T) -> T {
        if !(x > T::zero()) {
            return T::neg_infinity();
        }
        let (a, b) = (self.shape, self.rate);
        let norm: T = lit(a * b.ln() - ln_gamma(a));
        norm + lit::<T>(a - 1.0) * x.ln() - lit::<T>(b) * x
    }

    /// Derivative of [`Self::log_pdf`] with respect to `x`.
    pub fn dlog_pdf<T: Scalar>(&self, x: T) -> T {
        lit::<T>(self.shape - 1.0) / x - lit::<T>(self.rate)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate).expect("validated Gamma parameters").sample(rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Variance,
    Lengthscale,
    Period,
    Offset,
    Alpha,
    Noise,
}

impl ParamKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Variance => "variance",
            Self::Lengthscale => "lengthscale",
            Self::Period => "period",
            Self::Offset => "offset",
            Self::Alpha => "alpha",
            Self::Noise => "noise",
        }
    }

    /// Parameters of a base kernel, in slot order.
    pub fn for_family(family: KernelFamily) -> &'static [ParamKind] {
        match family {
            KernelFamily::Se => &[Self::Variance, Self::Lengthscale],
            KernelFamily::Per => &[Self::Variance, Self::Lengthscale, Self::Period],
            KernelFamily::Lin => &[Self::Variance, Self::Offset],
            KernelFamily::Rq => &[Self::Variance, Self::Lengthscale, Self::Alpha],
        }
    }
}

/// Priors of every parameter kind. Defaults assume unit-variance outputs and
/// inputs in the unit interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub variance: GammaPrior,
    pub lengthscale: GammaPrior,
    pub period: GammaPrior,
    pub offset: GammaPrior,
    pub alpha: GammaPrior,
    pub noise: GammaPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        let g = |a, b| GammaPrior { shape: a, rate: b };
        Self {
            variance: g(2.0, 3.0),
            lengthscale: g(2.0, 2.0),
            period: g(2.0, 2.0),
            offset: g(2.0, 3.0),
            alpha: g(2.0, 2.0),
            noise: g(1.5, 10.0),
        }
    }
}

impl PriorConfig {
    pub fn prior(&self, kind: ParamKind) -> GammaPrior {
        match kind {
            ParamKind::Variance => self.variance,
            ParamKind::Lengthscale => self.lengthscale,
            ParamKind::Period => self.period,
            ParamKind::Offset => self.offset,
            ParamKind::Alpha => self.alpha,
            ParamKind::Noise => self.noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSlot {
    /// e.g. `"1:PER0.period"`; the prefix is the leaf index.
    pub name: String,
    pub kind: ParamKind,
    /// `None` for the noise slot.
    pub leaf: Option<usize>,
    pub prior: GammaPrior,
}

/// Slot layout of a tree's hyperparameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    slots: Vec<ParamSlot>,
    /// Leaf kernels in left-to-right order.
    leaves: Vec<BaseKernel>,
}

impl ParamLayout {
    pub fn for_tree(tree: &ExprTree, priors: &PriorConfig) -> Self {
        let leaves = tree.leaves();
        let mut slots = Vec::new();
        for (i, leaf) in leaves.iter().enumerate() {
            for &kind in ParamKind::for_family(leaf.family) {
                slots.push(ParamSlot { name: format!("{i}:{leaf}.{}", kind.name()), kind, leaf: Some(i), prior: priors.prior(kind) });
            }
        }
        slots.push(ParamSlot { name: "noise".into(), kind: ParamKind::Noise, leaf: None, prior: priors.noise });
        Self { slots, leaves }
    }

    /// Number of slots, noise included.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn leaves(&self) -> &[BaseKernel] {
        &self.leaves
    }

    pub fn noise_index(&self) -> usize {
        self.slots.len() - 1
    }

    /// Checks that this layout was built for `tree`.
    pub fn check_tree(&self, tree: &ExprTree) -> Result<()> {
        let leaves = tree.leaves();
        let expected: usize = leaves.iter().map(|l| ParamKind::for_family(l.family).len()).sum::<usize>() + 1;
        if leaves != self.leaves || expected != self.slots.len() {
            return Err(Error::LayoutMismatch { expected, got: self.slots.len() });
        }
        Ok(())
    }

    /// Draws constrained values from the priors.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.slots.iter().map(|s| s.prior.sample(rng)).collect()
    }

    /// `Σ log p(θᵢ)` in constrained space.
    pub fn log_prior<T: Scalar>(&self, values: &[T]) -> T {
        self.slots.iter().zip(values).map(|(s, &v)| s.prior.log_pdf(v)).sum()
    }
}

/// A tree's hyperparameters: constrained (positive) values with their layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams<T> {
    layout: ParamLayout,
    values: Vec<T>,
}

impl<T: Scalar> HyperParams<T> {
    pub fn new(layout: ParamLayout, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LayoutMismatch { expected: layout.len(), got: values.len() });
        }
        if let Some(v) = values.iter().find(|v| !(**v > T::zero()) || !v.is_finite()) {
            return Err(Error::Config(format!("hyperparameters must be positive and finite, got {v}")));
        }
        Ok(Self { layout, values })
    }

    /// Values from the unconstrained mirror, `θ = softplus(u)`.
    pub fn from_unconstrained(layout: ParamLayout, u: &[T]) -> Result<Self> {
        Self::new(layout, u.iter().map(|&x| softplus(x)).collect())
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn unconstrained(&self) -> Vec<T> {
        self.values.iter().map(|&v| softplus_inv(v)).collect()
    }

    pub fn kernel_values(&self) -> &[T] {
        &self.values[..self.layout.noise_index()]
    }

    pub fn noise(&self) -> T {
        self.values[self.layout.noise_index()]
    }

    pub fn get(&self, name: &str) -> Option<T> {
        self.layout.slots.iter().position(|s| s.name == name).map(|i| self.values[i])
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, T)> + '_ {
        self.layout.slots.iter().zip(&self.values).map(|(s, &v)| (s.name.as_str(), v))
    }

    pub fn log_prior(&self) -> T {
        self.layout.log_prior(&self.values)
    }
}

/// `Σ log sigmoid(uᵢ)`, the log-Jacobian of the softplus bijection.
pub fn log_jacobian<T: Scalar>(u: &[T]) -> T {
    u.iter().map(|&x| log_sigmoid(x)).sum()
}

/// `dθ/du` of the softplus bijection.
pub fn dsoftplus<T: Scalar>(u: T) -> T {
    sigmoid(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gamma_log_pdf_closed_form() {
        let g = GammaPrior::new(2.0, 2.0).unwrap();
        assert!((g.log_pdf(1.0f64) - (4.0f64.ln() - 2.0)).abs() < 1e-14);
        assert_eq!(g.log_pdf(0.0f64), f64::NEG_INFINITY);
        let h = 1e-6;
        let fd: f64 = (g.log_pdf(0.7 + h) - g.log_pdf(0.7 - h)) / (2.0 * h);
        assert!((fd - g.dlog_pdf(0.7)).abs() < 1e-8);
    }

    #[test]
    fn gamma_rejects_bad_parameters() {
        assert!(GammaPrior::new(0.0, 1.0).is_err());
        assert!(GammaPrior::new(1.0, -1.0).is_err());
    }

    #[test]
    fn gamma_sampling_matches_mean() {
        let g = GammaPrior::new(2.0, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let m = (0..n).map(|_| g.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((m - 2.0 / 3.0).abs() < 0.02, "{m}");
    }

    #[test]
    fn layout_order_and_no_sharing() {
        let t: ExprTree = "(SE0 * PER0) + SE0".parse().unwrap();
        let layout = ParamLayout::for_tree(&t, &PriorConfig::default());
        let names: Vec<_> = layout.slots().iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "0:SE0.variance",
                "0:SE0.lengthscale",
                "1:PER0.variance",
                "1:PER0.lengthscale",
                "1:PER0.period",
                "2:SE0.variance",
                "2:SE0.lengthscale",
                "noise"
            ]
        );
        assert_eq!(layout.noise_index(), 7);
        assert!(layout.check_tree(&t).is_ok());
        let other: ExprTree = "(SE0 * LIN0) + SE0".parse().unwrap();
        assert!(matches!(layout.check_tree(&other), Err(Error::LayoutMismatch { .. })));
    }

    #[test]
    fn unconstrained_roundtrip() {
        let t: ExprTree = "LIN0 + RQ0".parse().unwrap();
        let layout = ParamLayout::for_tree(&t, &PriorConfig::default());
        let p = HyperParams::new(layout.clone(), vec![0.3f64, 1e-4, 2.0, 0.5, 9.0, 0.01]).unwrap();
        let back = HyperParams::from_unconstrained(layout, &p.unconstrained()).unwrap();
        for (a, b) in p.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-12 * a.max(1.0f64));
        }
        assert_eq!(p.noise(), 0.01);
        assert_eq!(p.get("1:RQ0.alpha"), Some(9.0));
    }

    #[test]
    fn rejects_nonpositive_values() {
        let t: ExprTree = "SE0".parse().unwrap();
        let layout = ParamLayout::for_tree(&t, &PriorConfig::default());
        assert!(HyperParams::new(layout.clone(), vec![1.0, 0.0, 0.1]).is_err());
        assert!(HyperParams::new(layout, vec![1.0, 0.1]).is_err());
    }
}
