//! Symmetry-aware tree features: the multisets of base kernels, root-to-leaf
//! paths and subtrees of an expression tree, and their normalized frequency
//! distributions.
//!
//! Rotations under commutative operators leave all three multisets unchanged:
//! base kernels and paths do not depend on child order, and subtrees are keyed
//! by the rotation-invariant canonical hash. Paths additionally collapse runs
//! of identical associative+commutative operators to one step.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{BaseKernel, ExprTree, Operator};
use crate::scalar::Mass;

/// Element of a per-dimension base distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaseFeature {
    Kernel(BaseKernel),
    /// No base kernel acts on this dimension.
    Null,
}

/// Operator sequence from the root to a leaf, followed by the leaf label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathFeature {
    pub ops: Vec<Operator>,
    pub leaf: BaseKernel,
}

impl fmt::Display for PathFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for op in &self.ops {
            write!(f, "{}->", op.name())?;
        }
        write!(f, "{}", self.leaf)
    }
}

/// Subtree keyed by canonical hash; `repr` is the text of the first occurrence.
#[derive(Clone, Debug)]
pub struct SubtreeFeature {
    pub hash: u64,
    pub repr: Arc<str>,
}

impl PartialEq for SubtreeFeature {
    fn eq(&self, other: &Self) -> bool {
        self.hash == other.hash
    }
}
impl Eq for SubtreeFeature {}
impl PartialOrd for SubtreeFeature {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SubtreeFeature {
    fn cmp(&self, other: &Self) -> Ordering {
        self.hash.cmp(&other.hash)
    }
}

/// Multiset with strictly positive counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureMultiset<K: Ord> {
    counts: BTreeMap<K, usize>,
}

impl<K: Ord> Default for FeatureMultiset<K> {
    fn default() -> Self {
        Self { counts: BTreeMap::new() }
    }
}

impl<K: Ord> FeatureMultiset<K> {
    pub fn insert(&mut self, key: K) {
        *self.counts.entry(key).or_insert(0) += 1;
    }

    pub fn count(&self, key: &K) -> usize {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Number of distinct elements.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, usize)> {
        self.counts.iter().map(|(k, &c)| (k, c))
    }
}

impl<K: Ord> FromIterator<K> for FeatureMultiset<K> {
    fn from_iter<I: IntoIterator<Item = K>>(iter: I) -> Self {
        let mut m = Self::default();
        for k in iter {
            m.insert(k);
        }
        m
    }
}

/// Discrete probability distribution over feature keys, sorted by key.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution<K, W> {
    entries: Vec<(K, W)>,
}

impl<K: Ord + Clone, W: Mass> Distribution<K, W> {
    pub fn from_multiset(m: &FeatureMultiset<K>) -> Self {
        let total = m.total();
        Self { entries: m.iter().map(|(k, c)| (k.clone(), W::ratio(c, total))).collect() }
    }

    /// Builds a distribution from raw `(key, mass)` pairs. Duplicate keys are
    /// merged; no normalization is applied.
    pub fn from_entries(mut entries: Vec<(K, W)>) -> Self {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut merged: Vec<(K, W)> = Vec::with_capacity(entries.len());
        for (k, w) in entries {
            match merged.last_mut() {
                Some((lk, lw)) if *lk == k => *lw = lw.clone() + w,
                _ => merged.push((k, w)),
            }
        }
        Self { entries: merged }
    }
}

impl<K: Ord, W: Mass> Distribution<K, W> {
    pub fn entries(&self) -> &[(K, W)] {
        &self.entries
    }

    pub fn mass(&self, key: &K) -> W {
        self.entries
            .binary_search_by(|(k, _)| k.cmp(key))
            .map(|i| self.entries[i].1.clone())
            .unwrap_or_else(|_| W::zero())
    }

    pub fn total_mass(&self) -> W {
        self.entries.iter().fold(W::zero(), |acc, (_, w)| acc + w.clone())
    }
}

/// The feature distributions of one tree.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDistributions<W> {
    /// One distribution per input dimension, or a single pooled distribution
    /// when per-dimension features are disabled.
    pub base: Vec<Distribution<BaseFeature, W>>,
    pub paths: Distribution<PathFeature, W>,
    pub subtrees: Distribution<SubtreeFeature, W>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub dimensions: usize,
    /// Split the base distribution by input dimension (with an empty-dimension
    /// marker).
    pub per_dimension: bool,
}

impl FeatureConfig {
    pub fn new(dimensions: usize) -> Self {
        Self { dimensions, per_dimension: true }
    }
}

/// Base kernel multiset(s). With `per_dimension`, returns one multiset per
/// dimension in `0..dimensions`, with [`BaseFeature::Null`] standing in for
/// dimensions no leaf acts on.
pub fn base_multiset(tree: &ExprTree, per_dimension: bool, dimensions: usize) -> Result<Vec<FeatureMultiset<BaseFeature>>> {
    let leaves = tree.leaves();
    if !per_dimension {
        return Ok(vec![leaves.into_iter().map(BaseFeature::Kernel).collect()]);
    }
    let mut out: Vec<FeatureMultiset<BaseFeature>> = (0..dimensions).map(|_| FeatureMultiset::default()).collect();
    for b in leaves {
        let slot = out.get_mut(b.dim).ok_or(Error::DimensionMismatch { needed: b.dim + 1, got: dimensions })?;
        slot.insert(BaseFeature::Kernel(b));
    }
    for m in &mut out {
        if m.is_empty() {
            m.insert(BaseFeature::Null);
        }
    }
    Ok(out)
}

pub fn path_multiset(tree: &ExprTree) -> FeatureMultiset<PathFeature> {
    fn walk(t: &ExprTree, prefix: &mut Vec<Operator>, out: &mut FeatureMultiset<PathFeature>) {
        match t {
            ExprTree::Leaf(b) => out.insert(PathFeature { ops: prefix.clone(), leaf: *b }),
            ExprTree::Node(n) => {
                let op = n.op();
                let collapse = op.is_associative() && op.is_commutative() && prefix.last() == Some(&op);
                if !collapse {
                    prefix.push(op);
                }
                walk(n.left(), prefix, out);
                walk(n.right(), prefix, out);
                if !collapse {
                    prefix.pop();
                }
            }
        }
    }
    let mut out = FeatureMultiset::default();
    walk(tree, &mut Vec::new(), &mut out);
    out
}

pub fn subtree_multiset(tree: &ExprTree) -> FeatureMultiset<SubtreeFeature> {
    let mut counts: BTreeMap<u64, (usize, Arc<str>)> = BTreeMap::new();
    tree.visit_preorder(&mut |t| {
        counts
            .entry(t.canonical_hash())
            .and_modify(|e| e.0 += 1)
            .or_insert_with(|| (1, Arc::from(t.to_string())));
    });
    FeatureMultiset {
        counts: counts.into_iter().map(|(hash, (c, repr))| (SubtreeFeature { hash, repr }, c)).collect(),
    }
}

pub fn to_distributions<W: Mass>(tree: &ExprTree, config: &FeatureConfig) -> Result<FeatureDistributions<W>> {
    let base = base_multiset(tree, config.per_dimension, config.dimensions)?;
    Ok(FeatureDistributions {
        base: base.iter().map(Distribution::from_multiset).collect(),
        paths: Distribution::from_multiset(&path_multiset(tree)),
        subtrees: Distribution::from_multiset(&subtree_multiset(tree)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::KernelFamily::{self, *};
    use num_rational::Ratio;

    fn b(f: KernelFamily) -> BaseKernel {
        BaseKernel::new(f, 0)
    }

    fn t1() -> ExprTree {
        "LIN0 * ((PER0 * SE0) + SE0)".parse().unwrap()
    }

    fn t2() -> ExprTree {
        "(LIN0 + SE0) * ((PER0 * LIN0) + SE0)".parse().unwrap()
    }

    fn path(ops: &[Operator], leaf: KernelFamily) -> PathFeature {
        PathFeature { ops: ops.to_vec(), leaf: b(leaf) }
    }

    #[test]
    fn base_multiset_of_worked_example() {
        let m = &base_multiset(&t1(), false, 1).unwrap()[0];
        assert_eq!(m.count(&BaseFeature::Kernel(b(Lin))), 1);
        assert_eq!(m.count(&BaseFeature::Kernel(b(Se))), 2);
        assert_eq!(m.count(&BaseFeature::Kernel(b(Per))), 1);
        assert_eq!(m.total(), 4);
    }

    #[test]
    fn empty_dimension_gets_null() {
        let t: ExprTree = "SE0 * LIN0".parse().unwrap();
        let m = base_multiset(&t, true, 2).unwrap();
        assert_eq!(m[1].count(&BaseFeature::Null), 1);
        assert_eq!(m[1].total(), 1);
        assert_eq!(m[0].count(&BaseFeature::Null), 0);
        assert!(base_multiset(&t, true, 0).is_err());
    }

    #[test]
    fn path_multiset_of_worked_examples() {
        use Operator::{Add, Mult};
        let p1 = path_multiset(&t1());
        assert_eq!(p1.len(), 4);
        assert_eq!(p1.count(&path(&[Mult, Add, Mult], Per)), 1);
        assert_eq!(p1.count(&path(&[Mult, Add, Mult], Se)), 1);
        assert_eq!(p1.count(&path(&[Mult, Add], Se)), 1);
        assert_eq!(p1.count(&path(&[Mult], Lin)), 1);

        let p2 = path_multiset(&t2());
        assert_eq!(p2.total(), 5);
        assert_eq!(p2.count(&path(&[Mult, Add, Mult], Per)), 1);
        assert_eq!(p2.count(&path(&[Mult, Add, Mult], Lin)), 1);
        assert_eq!(p2.count(&path(&[Mult, Add], Se)), 2);
        assert_eq!(p2.count(&path(&[Mult, Add], Lin)), 1);
    }

    #[test]
    fn path_collapse_of_repeated_operator() {
        let t: ExprTree = "LIN0 + (SE0 + PER0)".parse().unwrap();
        let p = path_multiset(&t);
        assert_eq!(p.count(&path(&[Operator::Add], Se)), 1);
        assert_eq!(p.count(&path(&[Operator::Add], Per)), 1);
        assert_eq!(p.total(), t.leaf_count());
        let leaf: ExprTree = "RQ0".parse().unwrap();
        assert_eq!(path_multiset(&leaf).count(&path(&[], Rq)), 1);
    }

    #[test]
    fn subtree_multiset_of_worked_example() {
        let s = subtree_multiset(&t1());
        assert_eq!(s.len(), 6);
        assert_eq!(s.total(), 7);
        let key = |src: &str| {
            let t: ExprTree = src.parse().unwrap();
            SubtreeFeature { hash: t.canonical_hash(), repr: Arc::from("") }
        };
        assert_eq!(s.count(&key("SE0")), 2);
        assert_eq!(s.count(&key("SE0 * PER0")), 1);
        assert_eq!(s.count(&key("SE0 + (SE0 * PER0)")), 1);
        assert_eq!(s.count(&key("((PER0 * SE0) + SE0) * LIN0")), 1);
    }

    #[test]
    fn rotated_subtrees_share_a_key() {
        let t: ExprTree = "(LIN0 + SE0) * (SE0 + LIN0)".parse().unwrap();
        let s = subtree_multiset(&t);
        let k: ExprTree = "LIN0 + SE0".parse().unwrap();
        assert_eq!(s.count(&SubtreeFeature { hash: k.canonical_hash(), repr: Arc::from("") }), 2);
    }

    #[test]
    fn exact_frequencies() {
        let cfg = FeatureConfig { dimensions: 1, per_dimension: true };
        let d1: FeatureDistributions<Ratio<i64>> = to_distributions(&t1(), &cfg).unwrap();
        let d2: FeatureDistributions<Ratio<i64>> = to_distributions(&t2(), &cfg).unwrap();
        let kb = |f| BaseFeature::Kernel(b(f));
        assert_eq!(d1.base[0].mass(&kb(Lin)), Ratio::new(1, 4));
        assert_eq!(d1.base[0].mass(&kb(Se)), Ratio::new(1, 2));
        assert_eq!(d1.base[0].mass(&kb(Per)), Ratio::new(1, 4));
        assert_eq!(d2.base[0].mass(&kb(Lin)), Ratio::new(2, 5));
        assert_eq!(d2.base[0].mass(&kb(Se)), Ratio::new(2, 5));
        assert_eq!(d2.base[0].mass(&kb(Per)), Ratio::new(1, 5));
        for d in [&d1, &d2] {
            assert_eq!(d.paths.total_mass(), Ratio::from_integer(1));
            assert_eq!(d.subtrees.total_mass(), Ratio::from_integer(1));
        }
    }

    #[test]
    fn from_entries_merges_duplicates() {
        let d = Distribution::from_entries(vec![(2u8, 0.25), (1, 0.5), (2, 0.25)]);
        assert_eq!(d.entries(), &[(1, 0.5), (2, 0.5)]);
    }
}
