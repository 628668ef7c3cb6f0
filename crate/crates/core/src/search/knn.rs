//! k-nearest-neighbor meta-regression over the grammar-operation graph
//! recorded while generating kernels.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::ExprTree;

pub const DEFAULT_K_CANDIDATES: [usize; 8] = [1, 2, 3, 5, 8, 10, 15, 20];

const CV_FOLDS: usize = 5;

/// Trees as nodes, one undirected edge per recorded grammar operation.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(from = "GraphRepr", into = "GraphRepr")]
pub struct GenerationGraph {
    nodes: Vec<u64>,
    index: HashMap<u64, usize>,
    adjacency: Vec<Vec<usize>>,
}

/// Serialized form: node hashes and the edge list.
#[derive(Serialize, Deserialize)]
struct GraphRepr {
    nodes: Vec<u64>,
    edges: Vec<(usize, usize)>,
}

impl From<GraphRepr> for GenerationGraph {
    fn from(r: GraphRepr) -> Self {
        let mut adjacency = vec![Vec::new(); r.nodes.len()];
        for (a, b) in r.edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        let index = r.nodes.iter().enumerate().map(|(i, &h)| (h, i)).collect();
        Self { nodes: r.nodes, index, adjacency }
    }
}

impl From<GenerationGraph> for GraphRepr {
    fn from(g: GenerationGraph) -> Self {
        Self { edges: g.edges(), nodes: g.nodes }
    }
}

impl GenerationGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Node index of `tree`, inserting it if new.
    pub fn add_node(&mut self, tree: &ExprTree) -> usize {
        let h = tree.canonical_hash();
        if let Some(&i) = self.index.get(&h) {
            return i;
        }
        self.nodes.push(h);
        self.adjacency.push(Vec::new());
        self.index.insert(h, self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    /// Records that `child` was produced from `parent` by one operation.
    /// Self-loops and repeated edges are ignored.
    pub fn add_edge(&mut self, parent: &ExprTree, child: &ExprTree) {
        let (a, b) = (self.add_node(parent), self.add_node(child));
        if a != b && !self.adjacency[a].contains(&b) {
            self.adjacency[a].push(b);
            self.adjacency[b].push(a);
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, tree: &ExprTree) -> Option<usize> {
        self.index.get(&tree.canonical_hash()).copied()
    }

    /// Each undirected edge once, as `(smaller, larger)` node indices.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, adj) in self.adjacency.iter().enumerate() {
            out.extend(adj.iter().filter(|&&b| a < b).map(|&b| (a, b)));
        }
        out
    }

    /// Hop distances from `source` by breadth-first search; `None` marks
    /// unreachable nodes.
    pub fn distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes.len()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].expect("queued nodes are reached") + 1;
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnPrediction {
    pub predictions: Vec<f64>,
    /// Neighbor count chosen by cross-validation.
    pub k: usize,
    /// Cross-validated RMSE of every candidate `k`.
    pub cv_rmse: Vec<(usize, f64)>,
}

/// Predicts `g` of each test tree as the mean over its `k` nearest training
/// trees by hop distance, ties broken by training order. Only reachable
/// trees count as neighbors; a test tree with none gets the training mean.
/// `k` minimizes 5-fold cross-validated RMSE on the training pairs, with
/// fold `i mod 5` for the `i`-th pair.
pub fn knn_meta_predict(graph: &GenerationGraph, train: &[(ExprTree, f64)], test: &[ExprTree], k_candidates: &[usize]) -> Result<KnnPrediction> {
    if train.is_empty() || k_candidates.is_empty() || k_candidates.contains(&0) {
        return Err(Error::Config("kNN needs training pairs and positive candidate k".into()));
    }
    let node = |t: &ExprTree| graph.node(t).ok_or_else(|| Error::Data(format!("tree {t} is not in the generation graph")));
    let train_nodes: Vec<usize> = train.iter().map(|(t, _)| node(t)).collect::<Result<_>>()?;
    let train_g: Vec<f64> = train.iter().map(|p| p.1).collect();

    // ranked[i]: training indices reachable from training tree i, nearest first
    let ranked_from = |source: usize| -> Vec<usize> {
        let dist = graph.distances(source);
        let mut r: Vec<(usize, usize)> = train_nodes.iter().enumerate().filter_map(|(j, &n)| dist[n].map(|d| (d, j))).collect();
        r.sort_unstable();
        r.into_iter().map(|(_, j)| j).collect()
    };
    let train_ranked: Vec<Vec<usize>> = train_nodes.iter().map(|&n| ranked_from(n)).collect();

    let mut cv_rmse = Vec::with_capacity(k_candidates.len());
    for &k in k_candidates {
        let mut sse = 0.0;
        for (i, ranked) in train_ranked.iter().enumerate() {
            let fold = i % CV_FOLDS;
            let in_train = |j: &usize| j % CV_FOLDS != fold;
            let fold_mean = mean((0..train.len()).filter(in_train).map(|j| train_g[j]));
            let pred = neighbor_mean(ranked.iter().copied().filter(in_train), k, &train_g).unwrap_or(fold_mean);
            sse += (pred - train_g[i]).powi(2);
        }
        cv_rmse.push((k, (sse / train.len() as f64).sqrt()));
    }
    let k = cv_rmse.iter().fold((usize::MAX, f64::INFINITY), |best, &(k, e)| if e < best.1 { (k, e) } else { best }).0;
    let k = if k == usize::MAX { k_candidates[0] } else { k };

    let global = mean(train_g.iter().copied());
    let predictions = test
        .iter()
        .map(|t| Ok(neighbor_mean(ranked_from(node(t)?).into_iter(), k, &train_g).unwrap_or(global)))
        .collect::<Result<_>>()?;
    Ok(KnnPrediction { predictions, k, cv_rmse })
}

fn neighbor_mean(ranked: impl Iterator<Item = usize>, k: usize, g: &[f64]) -> Option<f64> {
    let (s, n) = ranked.take(k).fold((0.0, 0usize), |(s, n), j| (s + g[j], n + 1));
    (n > 0).then(|| s / n as f64)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}
