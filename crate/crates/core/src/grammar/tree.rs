use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KernelFamily {
    #[serde(rename = "SE")]
    Se,
    #[serde(rename = "LIN")]
    Lin,
    #[serde(rename = "PER")]
    Per,
    #[serde(rename = "RQ")]
    Rq,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 4] = [Self::Se, Self::Lin, Self::Per, Self::Rq];

    pub fn name(self) -> &'static str {
        match self {
            Self::Se => "SE",
            Self::Lin => "LIN",
            Self::Per => "PER",
            Self::Rq => "RQ",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    fn tag(self) -> u64 {
        match self {
            Self::Se => 1,
            Self::Lin => 2,
            Self::Per => 3,
            Self::Rq => 4,
        }
    }
}

/// A one-dimensional base kernel acting on input coordinate `dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BaseKernel {
    pub family: KernelFamily,
    pub dim: usize,
}

impl BaseKernel {
    pub const fn new(family: KernelFamily, dim: usize) -> Self {
        Self { family, dim }
    }
}

impl fmt::Display for BaseKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.family.name(), self.dim)
    }
}

/// Binary kernel operator.
///
/// Only symmetric operators ship, but the symmetry flags are consulted
/// wherever hashing or path collapsing depends on them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operator {
    #[serde(rename = "ADD")]
    Add,
    #[serde(rename = "MULT")]
    Mult,
}

impl Operator {
    pub const ALL: [Operator; 2] = [Self::Add, Self::Mult];

    pub fn name(self) -> &'static str {
        match self {
            Self::Add => "ADD",
            Self::Mult => "MULT",
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Self::Add => '+',
            Self::Mult => '*',
        }
    }

    pub fn is_commutative(self) -> bool {
        true
    }

    pub fn is_associative(self) -> bool {
        true
    }

    fn tag(self) -> u64 {
        match self {
            Self::Add => 11,
            Self::Mult => 12,
        }
    }
}

/// Symbolic kernel expression: a strictly binary tree of operators over base
/// kernel leaves. Cloning is cheap; subtrees are shared.
#[derive(Clone, PartialEq, Eq)]
pub enum ExprTree {
    Leaf(BaseKernel),
    Node(Arc<OpNode>),
}

#[derive(Debug, PartialEq, Eq)]
pub struct OpNode {
    op: Operator,
    left: ExprTree,
    right: ExprTree,
    hash: u64,
    leaves: usize,
    nodes: usize,
    height: usize,
}

impl OpNode {
    pub fn op(&self) -> Operator {
        self.op
    }

    pub fn left(&self) -> &ExprTree {
        &self.left
    }

    pub fn right(&self) -> &ExprTree {
        &self.right
    }
}

const LEAF_TAG: u64 = 0x9e37_79b9_7f4a_7c15;
const NODE_TAG: u64 = 0xd1b5_4a32_d192_ed03;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn mix(a: u64, b: u64) -> u64 {
    splitmix(a ^ splitmix(b).rotate_left(17))
}

fn leaf_hash(b: BaseKernel) -> u64 {
    mix(mix(LEAF_TAG, b.family.tag()), b.dim as u64)
}

impl ExprTree {
    pub fn leaf(base: BaseKernel) -> Self {
        Self::Leaf(base)
    }

    pub fn combine(op: Operator, left: ExprTree, right: ExprTree) -> Self {
        let (hl, hr) = (left.canonical_hash(), right.canonical_hash());
        let (a, b) = if op.is_commutative() && hr < hl { (hr, hl) } else { (hl, hr) };
        let hash = mix(mix(mix(NODE_TAG, op.tag()), a), b);
        let leaves = left.leaf_count() + right.leaf_count();
        let nodes = left.node_count() + right.node_count() + 1;
        let height = left.height().max(right.height()) + 1;
        Self::Node(Arc::new(OpNode { op, left, right, hash, leaves, nodes, height }))
    }

    pub fn add(left: ExprTree, right: ExprTree) -> Self {
        Self::combine(Operator::Add, left, right)
    }

    pub fn mult(left: ExprTree, right: ExprTree) -> Self {
        Self::combine(Operator::Mult, left, right)
    }

    /// Hash that is invariant to swapping the children of commutative
    /// operators. No other algebraic identities are applied.
    pub fn canonical_hash(&self) -> u64 {
        match self {
            Self::Leaf(b) => leaf_hash(*b),
            Self::Node(n) => n.hash,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Self::Leaf(_))
    }

    pub fn as_leaf(&self) -> Option<BaseKernel> {
        match self {
            Self::Leaf(b) => Some(*b),
            Self::Node(_) => None,
        }
    }

    pub fn as_node(&self) -> Option<&OpNode> {
        match self {
            Self::Leaf(_) => None,
            Self::Node(n) => Some(n),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Self::Leaf(_) => 1,
            Self::Node(n) => n.leaves,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Self::Leaf(_) => 1,
            Self::Node(n) => n.nodes,
        }
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        match self {
            Self::Leaf(_) => 0,
            Self::Node(n) => n.height,
        }
    }

    /// Base kernels in left-to-right leaf order.
    pub fn leaves(&self) -> Vec<BaseKernel> {
        let mut out = Vec::with_capacity(self.leaf_count());
        self.visit_preorder(&mut |t| {
            if let Self::Leaf(b) = t {
                out.push(*b);
            }
        });
        out
    }

    /// All subtrees in pre-order; index `i` is position `i`.
    pub fn subtrees(&self) -> Vec<&ExprTree> {
        let mut out = Vec::with_capacity(self.node_count());
        fn walk<'a>(t: &'a ExprTree, out: &mut Vec<&'a ExprTree>) {
            out.push(t);
            if let ExprTree::Node(n) = t {
                walk(&n.left, out);
                walk(&n.right, out);
            }
        }
        walk(self, &mut out);
        out
    }

    /// Pre-order positions of the leaves.
    pub fn leaf_positions(&self) -> Vec<usize> {
        self.subtrees().iter().enumerate().filter(|(_, t)| t.is_leaf()).map(|(i, _)| i).collect()
    }

    pub fn visit_preorder<'a>(&'a self, f: &mut impl FnMut(&'a ExprTree)) {
        f(self);
        if let Self::Node(n) = self {
            n.left.visit_preorder(f);
            n.right.visit_preorder(f);
        }
    }

    pub fn subtree_at(&self, position: usize) -> Result<&ExprTree> {
        let nodes = self.node_count();
        let mut cur = self;
        let mut pos = position;
        loop {
            if pos == 0 {
                return Ok(cur);
            }
            match cur {
                Self::Leaf(_) => return Err(Error::InvalidPosition { position, nodes }),
                Self::Node(n) => {
                    let lc = n.left.node_count();
                    if pos <= lc {
                        cur = &n.left;
                        pos -= 1;
                    } else if pos <= lc + n.right.node_count() {
                        cur = &n.right;
                        pos -= lc + 1;
                    } else {
                        return Err(Error::InvalidPosition { position, nodes });
                    }
                }
            }
        }
    }

    /// Returns a new tree where the subtree at `position` is replaced by
    /// `f(subtree)`. Untouched branches are shared with `self`.
    pub fn replace_at(&self, position: usize, f: impl FnOnce(&ExprTree) -> ExprTree) -> Result<ExprTree> {
        let nodes = self.node_count();
        if position >= nodes {
            return Err(Error::InvalidPosition { position, nodes });
        }
        Ok(self.replace_rec(position, f))
    }

    fn replace_rec(&self, pos: usize, f: impl FnOnce(&ExprTree) -> ExprTree) -> ExprTree {
        if pos == 0 {
            return f(self);
        }
        let Self::Node(n) = self else { unreachable!("position checked against node count") };
        let lc = n.left.node_count();
        if pos <= lc {
            Self::combine(n.op, n.left.replace_rec(pos - 1, f), n.right.clone())
        } else {
            Self::combine(n.op, n.left.clone(), n.right.replace_rec(pos - lc - 1, f))
        }
    }

    /// Swaps the two children of the operator node at `position`.
    pub fn swap_children_at(&self, position: usize) -> Result<ExprTree> {
        match self.subtree_at(position)? {
            Self::Leaf(_) => Err(Error::InvalidPosition { position, nodes: self.node_count() }),
            Self::Node(_) => self.replace_at(position, |t| {
                let n = t.as_node().expect("checked above");
                Self::combine(n.op, n.right.clone(), n.left.clone())
            }),
        }
    }
}

impl From<BaseKernel> for ExprTree {
    fn from(b: BaseKernel) -> Self {
        Self::Leaf(b)
    }
}

impl fmt::Debug for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExprTree({self})")
    }
}
