//! Evidence oracles: the expensive black box every search strategy queries.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gp::{laplace_log_evidence, Dataset, EvidenceResult, MapConfig};
use crate::grammar::ExprTree;

/// Scores a kernel structure by its normalized log-evidence `g`.
pub trait EvidenceOracle: Send + Sync {
    fn evaluate(&self, tree: &ExprTree) -> Result<f64>;
}

impl<F: Fn(&ExprTree) -> Result<f64> + Send + Sync> EvidenceOracle for F {
    fn evaluate(&self, tree: &ExprTree) -> Result<f64> {
        self(tree)
    }
}

/// splitmix64 finalizer of `a ⊕ rotl(b, 29)`.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(29) ^ 0x9E37_79B9_7F4A_7C15;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Laplace-approximated evidence of a dataset. The MAP restarts of a tree
/// are seeded from `(seed, canonical hash)`, so a tree always receives the
/// same value regardless of when or by which strategy it is queried.
#[derive(Clone, Debug)]
pub struct LaplaceOracle {
    data: Dataset<f64>,
    map: MapConfig,
    seed: u64,
}

impl LaplaceOracle {
    pub fn new(data: Dataset<f64>, map: MapConfig, seed: u64) -> Self {
        Self { data, map, seed }
    }

    pub fn data(&self) -> &Dataset<f64> {
        &self.data
    }

    pub fn map_config(&self) -> &MapConfig {
        &self.map
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The full evidence computation, including the MAP hyperparameters.
    pub fn evidence(&self, tree: &ExprTree) -> Result<EvidenceResult<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, tree.canonical_hash()));
        laplace_log_evidence(tree, &self.data, &self.map, &mut rng)
    }
}

impl EvidenceOracle for LaplaceOracle {
    fn evaluate(&self, tree: &ExprTree) -> Result<f64> {
        let g = self.evidence(tree)?.g;
        if !g.is_finite() {
            return Err(Error::NonFinite("normalized log-evidence"));
        }
        Ok(g)
    }
}

/// Memoizes an oracle by canonical hash, failures included. Useful when
/// several searches query the same deterministic oracle.
#[derive(Debug)]
pub struct CachedOracle<O> {
    inner: O,
    memo: Mutex<HashMap<u64, std::result::Result<f64, String>>>,
    misses: AtomicUsize,
}

impl<O: EvidenceOracle> CachedOracle<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, memo: Mutex::new(HashMap::new()), misses: AtomicUsize::new(0) }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    /// Number of evaluations forwarded to the inner oracle.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

impl<O: EvidenceOracle> EvidenceOracle for CachedOracle<O> {
    fn evaluate(&self, tree: &ExprTree) -> Result<f64> {
        let key = tree.canonical_hash();
        if let Some(r) = self.memo.lock().expect("oracle cache poisoned").get(&key) {
            return r.clone().map_err(Error::Oracle);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let r = self.inner.evaluate(tree).map_err(|e| e.to_string());
        self.memo.lock().expect("oracle cache poisoned").insert(key, r.clone());
        r.map_err(Error::Oracle)
    }
}
