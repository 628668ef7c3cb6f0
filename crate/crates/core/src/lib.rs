//! Gaussian-process kernel structure selection by Bayesian optimization over
//! grammar-generated kernel expressions.
//!
//! Kernels are expression trees over base kernels. Trees are compared by an
//! optimal-transport distance between their feature distributions, which
//! turns into a kernel over kernels for a meta-GP that predicts each tree's
//! normalized log-evidence. An evolutionary optimizer maximizes expected
//! improvement under that meta-GP to pick the next tree to score.
//!
//! Numeric code is generic over [`scalar::Scalar`]; the search strategies and
//! the experiment harness run in `f64`.

pub mod error;
pub mod features;
pub mod gp;
pub mod grammar;
pub mod harness;
pub mod linalg;
pub mod metamodel;
pub mod optim;
pub mod scalar;
pub mod search;
pub mod sot;

pub use error::{Error, Result};
pub use gp::{laplace_log_evidence, log_marginal_likelihood, posterior_predict, HyperParams, MapConfig};
pub use grammar::{ExprTree, GrammarConfig, SearchSpace};
pub use metamodel::{MetaHyperparams, MetaPosterior};
pub use search::{run_search, EvidenceOracle, LaplaceOracle, SearchConfig, SearchTrace, Strategy};
pub use sot::{kernel_kernel, sot_distance, DistanceWeights, KernelKernelParams};

pub type Dataset = gp::Dataset<f64>;
pub type Dataset32 = gp::Dataset<f32>;
pub type Matrix = linalg::Matrix<f64>;
pub type FeatureDistributions = features::FeatureDistributions<f64>;
/// Exact feature distributions for rational distance checks.
pub type RationalFeatureDistributions = features::FeatureDistributions<num_rational::Ratio<i64>>;
pub type MetaDataset = metamodel::MetaDataset<f64>;
