//! Kernel grammar: base kernels, operators, expression trees and the grammar
//! operations that generate the search space.
//!
//! Grammar operations are
//!
//! * `S -> T(S, B)`: combine any subexpression `S` with a base kernel `B`
//!   under an operator `T`, and
//! * `B -> B'`: exchange a base kernel leaf for another base kernel.
//!
//! All operations return new trees; inputs are never modified.

mod text;
mod tree;

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use tree::{BaseKernel, ExprTree, KernelFamily, OpNode, Operator};

/// The two search spaces used for benchmarking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchSpace {
    /// `SE, LIN, PER, RQ` per dimension; intended for 1–2 dimensional data.
    A,
    /// `SE, RQ` per dimension; intended for higher dimensional data.
    B,
}

impl SearchSpace {
    pub fn families(self) -> Vec<KernelFamily> {
        match self {
            Self::A => KernelFamily::ALL.to_vec(),
            Self::B => vec![KernelFamily::Se, KernelFamily::Rq],
        }
    }

    /// Default number of evolutionary acquisition steps for this space.
    pub fn default_ea_steps(self) -> usize {
        match self {
            Self::A => 6,
            Self::B => 10,
        }
    }
}

impl std::str::FromStr for SearchSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Self::A),
            "B" | "b" => Ok(Self::B),
            other => Err(Error::Config(format!("unknown search space {other:?} (expected A or B)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub families: Vec<KernelFamily>,
    /// Input dimensionality `D`; base kernels exist for dimensions `0..D`.
    pub dimensions: usize,
    pub operators: Vec<Operator>,
    /// Maximum tree height produced by random generation.
    pub depth_bound: usize,
}

pub const DEFAULT_DEPTH_BOUND: usize = 10;

impl GrammarConfig {
    pub fn new(families: Vec<KernelFamily>, dimensions: usize, operators: Vec<Operator>, depth_bound: usize) -> Result<Self> {
        let cfg = Self { families, dimensions, operators, depth_bound };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(space: SearchSpace, dimensions: usize) -> Self {
        Self { families: space.families(), dimensions, operators: Operator::ALL.to_vec(), depth_bound: DEFAULT_DEPTH_BOUND }
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::Config("grammar needs at least one base kernel family".into()));
        }
        if self.operators.is_empty() {
            return Err(Error::Config("grammar needs at least one operator".into()));
        }
        if self.dimensions == 0 {
            return Err(Error::Config("grammar needs at least one input dimension".into()));
        }
        Ok(())
    }

    /// Every base kernel label, family-major.
    pub fn base_kernels(&self) -> Vec<BaseKernel> {
        self.families
            .iter()
            .flat_map(|&f| (0..self.dimensions).map(move |d| BaseKernel::new(f, d)))
            .collect()
    }

    pub fn random_base<R: Rng + ?Sized>(&self, rng: &mut R) -> BaseKernel {
        let family = self.families[rng.random_range(0..self.families.len())];
        let dim = if self.dimensions == 1 { 0 } else { rng.random_range(0..self.dimensions) };
        BaseKernel::new(family, dim)
    }
}

/// A single grammar operation, addressed by pre-order node position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrammarOp {
    /// Replace the subexpression `S` at `position` by `op(S, base)`.
    Extend { op: Operator, position: usize, base: BaseKernel },
    /// Replace the leaf at `position` by `base`.
    Replace { position: usize, base: BaseKernel },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Extend(Operator),
    Replace,
}

impl GrammarOp {
    pub fn kind(&self) -> OpKind {
        match self {
            Self::Extend { op, .. } => OpKind::Extend(*op),
            Self::Replace { .. } => OpKind::Replace,
        }
    }
}

pub fn apply_grammar_op(tree: &ExprTree, op: GrammarOp) -> Result<ExprTree> {
    match op {
        GrammarOp::Extend { op, position, base } => {
            tree.replace_at(position, |s| ExprTree::combine(op, s.clone(), ExprTree::leaf(base)))
        }
        GrammarOp::Replace { position, base } => {
            if !tree.subtree_at(position)?.is_leaf() {
                return Err(Error::NotALeaf(position));
            }
            tree.replace_at(position, |_| ExprTree::leaf(base))
        }
    }
}

/// Height of the tree that `op` would produce.
fn resulting_height(tree: &ExprTree, position: usize) -> usize {
    fn depth_and_height(t: &ExprTree, pos: usize, depth: usize) -> (usize, usize) {
        if pos == 0 {
            return (depth, t.height());
        }
        let n = t.as_node().expect("valid position");
        let lc = n.left().node_count();
        if pos <= lc {
            depth_and_height(n.left(), pos - 1, depth + 1)
        } else {
            depth_and_height(n.right(), pos - lc - 1, depth + 1)
        }
    }
    let (depth, h) = depth_and_height(tree, position, 0);
    tree.height().max(depth + h + 1)
}

/// Draws one grammar operation: the kind uniformly over the configured
/// operators plus "replace", the target uniformly over valid positions, the
/// base kernel uniformly. Extensions that would exceed the depth bound fall
/// back to a replacement.
pub fn sample_grammar_op<R: Rng + ?Sized>(tree: &ExprTree, config: &GrammarConfig, rng: &mut R) -> GrammarOp {
    let kinds = config.operators.len() + 1;
    let k = rng.random_range(0..kinds);
    let base = config.random_base(rng);
    if k < config.operators.len() {
        let position = rng.random_range(0..tree.node_count());
        if resulting_height(tree, position) <= config.depth_bound {
            return GrammarOp::Extend { op: config.operators[k], position, base };
        }
    }
    let leaves = tree.leaf_positions();
    let position = leaves[rng.random_range(0..leaves.len())];
    GrammarOp::Replace { position, base }
}

pub fn random_grammar_op<R: Rng + ?Sized>(tree: &ExprTree, config: &GrammarConfig, rng: &mut R) -> ExprTree {
    let op = sample_grammar_op(tree, config, rng);
    apply_grammar_op(tree, op).expect("sampled positions are valid")
}

/// Every distinct tree one grammar operation away from `tree`, deduplicated
/// by canonical hash and excluding `tree` itself.
pub fn neighbors(tree: &ExprTree, config: &GrammarConfig) -> Vec<ExprTree> {
    let bases = config.base_kernels();
    let mut seen = HashSet::from([tree.canonical_hash()]);
    let mut out = Vec::new();
    let mut push = |t: ExprTree| {
        if seen.insert(t.canonical_hash()) {
            out.push(t);
        }
    };
    for position in 0..tree.node_count() {
        for &op in &config.operators {
            for &base in &bases {
                push(apply_grammar_op(tree, GrammarOp::Extend { op, position, base }).expect("valid position"));
            }
        }
    }
    for position in tree.leaf_positions() {
        let current = tree.subtree_at(position).ok().and_then(ExprTree::as_leaf);
        for &base in &bases {
            if Some(base) != current {
                push(apply_grammar_op(tree, GrammarOp::Replace { position, base }).expect("valid leaf"));
            }
        }
    }
    out
}

/// Initial design: two random grammar operations applied to every base
/// kernel, deduplicated by canonical hash.
pub fn generate_initial_trees<R: Rng + ?Sized>(config: &GrammarConfig, rng: &mut R) -> Vec<ExprTree> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for base in config.base_kernels() {
        let t = ExprTree::leaf(base);
        let t = random_grammar_op(&t, config, rng);
        let t = random_grammar_op(&t, config, rng);
        if seen.insert(t.canonical_hash()) {
            out.push(t);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use KernelFamily::*;

    fn leaf(f: KernelFamily) -> ExprTree {
        ExprTree::leaf(BaseKernel::new(f, 0))
    }

    fn one_d(families: Vec<KernelFamily>) -> GrammarConfig {
        GrammarConfig::new(families, 1, Operator::ALL.to_vec(), DEFAULT_DEPTH_BOUND).unwrap()
    }

    #[test]
    fn extend_at_root() {
        let t = apply_grammar_op(&leaf(Lin), GrammarOp::Extend { op: Operator::Add, position: 0, base: BaseKernel::new(Se, 0) }).unwrap();
        assert_eq!(t.to_string(), "LIN0 + SE0");
    }

    #[test]
    fn replace_leaf() {
        let t: ExprTree = "PER0 * SE0".parse().unwrap();
        let u = apply_grammar_op(&t, GrammarOp::Replace { position: 1, base: BaseKernel::new(Lin, 0) }).unwrap();
        assert_eq!(u.to_string(), "LIN0 * SE0");
        assert_eq!(t.to_string(), "PER0 * SE0");
        // identity exchange is permitted
        let same = apply_grammar_op(&t, GrammarOp::Replace { position: 2, base: BaseKernel::new(Se, 0) }).unwrap();
        assert_eq!(same, t);
    }

    #[test]
    fn reaches_intro_example_in_two_steps() {
        // each step adds one base kernel: LIN + SE, then SE -> SE * PER,
        // then (SE * PER) -> (SE * PER) + SE
        let se = BaseKernel::new(Se, 0);
        let per = BaseKernel::new(Per, 0);
        let t = apply_grammar_op(&leaf(Lin), GrammarOp::Extend { op: Operator::Add, position: 0, base: se }).unwrap();
        let t = apply_grammar_op(&t, GrammarOp::Extend { op: Operator::Mult, position: 2, base: per }).unwrap();
        let t = apply_grammar_op(&t, GrammarOp::Extend { op: Operator::Add, position: 2, base: se }).unwrap();
        assert_eq!(t.to_string(), "LIN0 + ((SE0 * PER0) + SE0)");
    }

    #[test]
    fn invalid_positions() {
        let t: ExprTree = "PER0 * SE0".parse().unwrap();
        let b = BaseKernel::new(Se, 0);
        assert!(matches!(apply_grammar_op(&t, GrammarOp::Replace { position: 0, base: b }), Err(Error::NotALeaf(0))));
        assert!(matches!(
            apply_grammar_op(&t, GrammarOp::Extend { op: Operator::Add, position: 3, base: b }),
            Err(Error::InvalidPosition { .. })
        ));
    }

    #[test]
    fn neighbors_of_single_leaf() {
        let cfg = one_d(vec![Se, Rq]);
        let n = neighbors(&leaf(Se), &cfg);
        let mut got: Vec<String> = n.iter().map(|t| t.to_string()).collect();
        got.sort();
        assert_eq!(got, vec!["RQ0", "SE0 * RQ0", "SE0 * SE0", "SE0 + RQ0", "SE0 + SE0"]);
    }

    #[test]
    fn neighbors_count_bound_and_replace_floor() {
        let cfg = GrammarConfig::preset(SearchSpace::A, 2);
        let t: ExprTree = "LIN0 + (SE1 * PER0)".parse().unwrap();
        let n = neighbors(&t, &cfg);
        let labels = cfg.base_kernels().len();
        let bound = t.node_count() * cfg.operators.len() * labels + t.leaf_count() * (labels - 1);
        assert!(n.len() <= bound);
        let replaces = n.iter().filter(|u| u.leaf_count() == t.leaf_count()).count();
        assert!(replaces >= labels - 1);
        assert!(n.iter().all(|u| u.canonical_hash() != t.canonical_hash()));
    }

    #[test]
    fn random_op_is_deterministic() {
        let cfg = one_d(KernelFamily::ALL.to_vec());
        let t = leaf(Se);
        let a = random_grammar_op(&t, &cfg, &mut ChaCha8Rng::seed_from_u64(7));
        let b = random_grammar_op(&t, &cfg, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn random_op_leaf_arithmetic() {
        let cfg = GrammarConfig::preset(SearchSpace::A, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = leaf(Se);
        for _ in 0..200 {
            let op = sample_grammar_op(&t, &cfg, &mut rng);
            let u = apply_grammar_op(&t, op).unwrap();
            match op.kind() {
                OpKind::Extend(_) => assert_eq!(u.leaf_count(), t.leaf_count() + 1),
                OpKind::Replace => assert_eq!(u.leaf_count(), t.leaf_count()),
            }
            t = if u.leaf_count() > 8 { leaf(Per) } else { u };
        }
    }

    #[test]
    fn op_kind_frequencies_are_uniform() {
        let cfg = one_d(KernelFamily::ALL.to_vec());
        let t: ExprTree = "LIN0 + (SE0 * PER0)".parse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            let idx = match sample_grammar_op(&t, &cfg, &mut rng).kind() {
                OpKind::Extend(Operator::Add) => 0,
                OpKind::Extend(Operator::Mult) => 1,
                OpKind::Replace => 2,
            };
            counts[idx] += 1;
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 3.0).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn depth_bound_forces_replacement() {
        let cfg = GrammarConfig::new(vec![Se], 1, vec![Operator::Add], 1).unwrap();
        let t: ExprTree = "SE0 + SE0".parse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let u = random_grammar_op(&t, &cfg, &mut rng);
            assert!(u.height() <= 1);
        }
    }

    #[test]
    fn initial_trees() {
        let cfg = one_d(KernelFamily::ALL.to_vec());
        let a = generate_initial_trees(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        assert!(a.len() <= 4 && !a.is_empty());
        assert!(a.iter().all(|t| (1..=3).contains(&t.leaf_count())));
        let b = generate_initial_trees(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);

        let cfg5 = GrammarConfig::preset(SearchSpace::B, 5);
        let c = generate_initial_trees(&cfg5, &mut ChaCha8Rng::seed_from_u64(5));
        assert!(c.len() <= 10);
    }

    #[test]
    fn config_validation() {
        assert!(GrammarConfig::new(vec![], 1, vec![Operator::Add], 3).is_err());
        assert!(GrammarConfig::new(vec![Se], 1, vec![], 3).is_err());
        assert!(GrammarConfig::new(vec![Se], 0, vec![Operator::Add], 3).is_err());
    }
}
