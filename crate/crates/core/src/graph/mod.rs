//! Graph representation, symmetric normalization, and the link-prediction
//! edge-split protocol.

mod io;

pub use io::{load_citation_dataset, load_generic_graph, save_generic_graph, IngestStats};

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("self-loop on node {node} is not allowed")]
    SelfLoop { node: usize },
    #[error("edge ({0}, {1}) references a node >= {num_nodes}", edge.0, edge.1)]
    EdgeOutOfRange { edge: (usize, usize), num_nodes: usize },
    #[error("feature matrix has {feature_rows} rows but the graph has {num_nodes} nodes")]
    FeatureRowMismatch { feature_rows: usize, num_nodes: usize },
    #[error("graph with {num_edges} edges is too small: validation and test quotas must both be >= 1 and leave at least one training edge")]
    TooSmallForSplit { num_edges: usize },
    #[error("graph too dense for negative sampling: {needed} negatives requested but only {available} non-edges exist")]
    NotEnoughNonEdges { needed: usize, available: usize },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Immutable undirected graph: canonical deduplicated edge list plus a
/// dense node-feature matrix.
#[derive(Debug, Clone)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
}

impl Graph {
    /// Canonicalizes edges to (min, max), sorts and deduplicates them.
    /// Self-loops and out-of-range endpoints are rejected.
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Tensor,
    ) -> Result<Self, GraphError> {
        if features.rows() != num_nodes {
            return Err(GraphError::FeatureRowMismatch {
                feature_rows: features.rows(),
                num_nodes,
            });
        }
        let mut canonical = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a == b {
                return Err(GraphError::SelfLoop { node: a });
            }
            if a >= num_nodes || b >= num_nodes {
                return Err(GraphError::EdgeOutOfRange { edge: (a, b), num_nodes });
            }
            canonical.push((a.min(b), a.max(b)));
        }
        canonical.sort_unstable();
        canonical.dedup();
        Ok(Graph { num_nodes, edges: canonical, features })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Canonical edge set for O(1) membership tests.
    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Per-node sorted neighbor lists.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn connected_components(&self) -> usize {
        let adj = self.adjacency_lists();
        let mut seen = vec![false; self.num_nodes];
        let mut components = 0;
        let mut stack = Vec::new();
        for start in 0..self.num_nodes {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        components
    }

    /// Returns a copy whose feature rows are divided by their sum
    /// (rows summing to zero are left untouched).
    pub fn row_normalized(mut self) -> Graph {
        for i in 0..self.num_nodes {
            let row = self.features.row_mut(i);
            let sum: f64 = row.iter().sum();
            if sum != 0.0 {
                for v in row {
                    *v /= sum;
                }
            }
        }
        self
    }
}

/// Sparse symmetric operator `D^{-1/2} (A + I) D^{-1/2}` in compressed
/// row form, with `D` the degree matrix of `A + I`.
///
/// Entry (i, j) is computed from the canonical formula
/// `1 / sqrt(d_i * d_j)`, so symmetry holds exactly; diagonal entries are
/// strictly positive because self-loops are always present.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Stored entry (i, j), or 0.0 when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        match row.binary_search(&j) {
            Ok(pos) => self.data[self.indptr[i] + pos],
            Err(_) => 0.0,
        }
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.data[range].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row_entries(i) {
                out.set(i, j, v);
            }
        }
        out
    }
}

/// Builds the self-loop symmetric normalization of the graph adjacency.
/// Deterministic; rows are stored with sorted column indices.
pub fn normalize(g: &Graph) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let adj = g.adjacency_lists();
    let degree: Vec<f64> = adj.iter().map(|list| (list.len() + 1) as f64).collect();

    let mut indptr = Vec::with_capacity(n + 1);
    indptr.push(0usize);
    let mut indices = Vec::with_capacity(2 * g.num_edges() + n);
    let mut data = Vec::with_capacity(2 * g.num_edges() + n);
    for i in 0..n {
        let mut self_inserted = false;
        for &j in &adj[i] {
            if !self_inserted && j > i {
                indices.push(i);
                data.push(1.0 / degree[i]);
                self_inserted = true;
            }
            indices.push(j);
            data.push(1.0 / (degree[i] * degree[j]).sqrt());
        }
        if !self_inserted {
            indices.push(i);
            data.push(1.0 / degree[i]);
        }
        indptr.push(indices.len());
    }
    NormalizedAdjacency { n, indptr, indices, data }
}

/// Train graph plus held-out positive/negative edge sets.
#[derive(Debug, Clone)]
pub struct EdgeSplit {
    pub train_graph: Graph,
    pub val_pos: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
    pub seed: u64,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Removes round(10% * |E|) test and round(5% * |E|) validation positives
/// and samples equally many negatives, uniformly over non-edges with no
/// self-loops, excluding the full original edge set and one another.
/// The same seed reproduces the identical split bit-for-bit.
pub fn split_edges(g: &Graph, seed: u64) -> Result<EdgeSplit, GraphError> {
    let m = g.num_edges();
    let n = g.num_nodes();
    let n_test = round_half_up(0.10 * m as f64);
    let n_val = round_half_up(0.05 * m as f64);
    if n_test == 0 || n_val == 0 || n_test + n_val >= m {
        return Err(GraphError::TooSmallForSplit { num_edges: m });
    }
    let total_pairs = n * (n - 1) / 2;
    let needed = n_test + n_val;
    if total_pairs - m < needed {
        return Err(GraphError::NotEnoughNonEdges { needed, available: total_pairs - m });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = g.edges().to_vec();
    shuffled.shuffle(&mut rng);
    let test_pos: Vec<_> = shuffled[..n_test].to_vec();
    let val_pos: Vec<_> = shuffled[n_test..n_test + n_val].to_vec();
    let train_edges: Vec<_> = shuffled[n_test + n_val..].to_vec();

    // Rejection sampling over canonical pairs; test negatives are drawn
    // first, then validation negatives.
    let full_set = g.edge_set();
    let mut chosen: HashSet<(usize, usize)> = HashSet::with_capacity(needed);
    let mut negatives = Vec::with_capacity(needed);
    while negatives.len() < needed {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if full_set.contains(&pair) || !chosen.insert(pair) {
            continue;
        }
        negatives.push(pair);
    }
    let test_neg = negatives[..n_test].to_vec();
    let val_neg = negatives[n_test..].to_vec();

    let train_graph = Graph::new(n, train_edges, g.features().clone())?;
    Ok(EdgeSplit { train_graph, val_pos, val_neg, test_pos, test_neg, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> Graph {
        let edges = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::new(n, edges, Tensor::identity(n)).unwrap()
    }

    #[test]
    fn new_canonicalizes_and_dedups() {
        let g = Graph::new(3, vec![(2, 0), (0, 2), (1, 0)], Tensor::zeros(3, 2)).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2)]);
    }

    #[test]
    fn new_rejects_self_loops_and_bad_indices() {
        assert!(matches!(
            Graph::new(3, vec![(1, 1)], Tensor::zeros(3, 1)),
            Err(GraphError::SelfLoop { node: 1 })
        ));
        assert!(matches!(
            Graph::new(3, vec![(0, 3)], Tensor::zeros(3, 1)),
            Err(GraphError::EdgeOutOfRange { .. })
        ));
        assert!(matches!(
            Graph::new(3, vec![(0, 1)], Tensor::zeros(2, 1)),
            Err(GraphError::FeatureRowMismatch { .. })
        ));
    }

    #[test]
    fn normalize_two_node_complete() {
        let g = Graph::new(2, vec![(0, 1)], Tensor::zeros(2, 1)).unwrap();
        let norm = normalize(&g);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(norm.get(i, j), 0.5);
            }
        }
    }

    #[test]
    fn normalize_single_isolated_node() {
        let g = Graph::new(1, vec![], Tensor::zeros(1, 1)).unwrap();
        let norm = normalize(&g);
        assert_eq!(norm.nnz(), 1);
        assert_eq!(norm.get(0, 0), 1.0);
    }

    #[test]
    fn normalize_three_node_path() {
        let norm = normalize(&path_graph(3));
        assert!((norm.get(0, 1) - 1.0 / 6.0_f64.sqrt()).abs() < 1e-15);
        assert!((norm.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((norm.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(norm.get(0, 2), 0.0);
    }

    #[test]
    fn normalize_entries_in_unit_interval_and_symmetric() {
        let norm = normalize(&path_graph(7));
        for i in 0..7 {
            for (j, v) in norm.row_entries(i) {
                assert!(v > 0.0 && v <= 1.0);
                assert_eq!(norm.get(j, i), v);
            }
        }
    }

    #[test]
    fn normalize_invariant_under_edge_permutation() {
        let edges = vec![(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)];
        let g1 = Graph::new(4, edges.clone(), Tensor::zeros(4, 1)).unwrap();
        let mut reversed: Vec<_> = edges.into_iter().rev().map(|(a, b)| (b, a)).collect();
        reversed.push((1, 0)); // duplicate collapses away
        let g2 = Graph::new(4, reversed, Tensor::zeros(4, 1)).unwrap();
        assert_eq!(normalize(&g1), normalize(&g2));
    }

    #[test]
    fn split_quota_arithmetic_matches_rounding_rule() {
        // 5,429 edges -> 543 test / 271 validation positives.
        assert_eq!(round_half_up(0.10 * 5429.0), 543);
        assert_eq!(round_half_up(0.05 * 5429.0), 271);
    }

    #[test]
    fn split_is_deterministic_and_partitions_edges() {
        let g = path_graph(60);
        let s1 = split_edges(&g, 7).unwrap();
        let s2 = split_edges(&g, 7).unwrap();
        assert_eq!(s1.test_pos, s2.test_pos);
        assert_eq!(s1.val_pos, s2.val_pos);
        assert_eq!(s1.test_neg, s2.test_neg);
        assert_eq!(s1.val_neg, s2.val_neg);
        assert_eq!(s1.train_graph.edges(), s2.train_graph.edges());

        let mut rebuilt: Vec<_> = s1
            .train_graph
            .edges()
            .iter()
            .chain(&s1.val_pos)
            .chain(&s1.test_pos)
            .copied()
            .collect();
        rebuilt.sort_unstable();
        assert_eq!(rebuilt, g.edges());
    }

    #[test]
    fn split_negatives_disjoint_from_edges_and_each_other() {
        let g = path_graph(60);
        let s = split_edges(&g, 99).unwrap();
        let full = g.edge_set();
        let mut seen = HashSet::new();
        for &(a, b) in s.test_neg.iter().chain(&s.val_neg) {
            assert!(a < b);
            assert!(!full.contains(&(a, b)));
            assert!(seen.insert((a, b)));
        }
        assert_eq!(s.test_neg.len(), s.test_pos.len());
        assert_eq!(s.val_neg.len(), s.val_pos.len());
    }

    #[test]
    fn split_rejects_tiny_graphs() {
        let g = path_graph(4);
        assert!(matches!(split_edges(&g, 1), Err(GraphError::TooSmallForSplit { .. })));
    }

    #[test]
    fn components_counted() {
        let g = Graph::new(5, vec![(0, 1), (1, 2)], Tensor::zeros(5, 1)).unwrap();
        assert_eq!(g.connected_components(), 3);
    }

    #[test]
    fn row_normalization_divides_by_row_sum() {
        let features = Tensor::from_rows(&[vec![2.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let g = Graph::new(2, vec![(0, 1)], features).unwrap().row_normalized();
        assert_eq!(g.features().row(0), &[0.5, 0.5]);
        assert_eq!(g.features().row(1), &[0.0, 0.0]);
    }
}
