//! Synthetic graphs for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::Graph;
use crate::tensor::Tensor;

/// Two complete clusters of `per_cluster` nodes joined by a single bridge
/// edge, with identity features. Link structure is trivially learnable,
/// which makes it a good overfitting target.
pub fn two_cluster_graph(per_cluster: usize) -> Graph {
    assert!(per_cluster >= 2);
    let n = 2 * per_cluster;
    let mut edges = Vec::new();
    for base in [0, per_cluster] {
        for i in base..base + per_cluster {
            for j in (i + 1)..base + per_cluster {
                edges.push((i, j));
            }
        }
    }
    edges.push((0, per_cluster));
    Graph::new(n, edges, Tensor::identity(n)).expect("construction is valid")
}

/// Erdős–Rényi graph with `edge_prob` and standard-normal features.
/// Guaranteed to contain at least one edge.
pub fn random_graph(n: usize, edge_prob: f64, feature_dim: usize, seed: u64) -> Graph {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_range(0.0..1.0) < edge_prob {
                edges.push((i, j));
            }
        }
    }
    if edges.is_empty() {
        let a = rng.random_range(0..n - 1);
        edges.push((a, a + 1));
    }
    let features = Tensor::standard_normal(n, feature_dim, &mut rng);
    Graph::new(n, edges, features).expect("construction is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_clusters_have_expected_edge_count() {
        let g = two_cluster_graph(5);
        assert_eq!(g.num_nodes(), 10);
        assert_eq!(g.num_edges(), 2 * (5 * 4 / 2) + 1);
        assert_eq!(g.connected_components(), 1);
    }

    #[test]
    fn random_graph_is_seeded() {
        let a = random_graph(12, 0.3, 4, 9);
        let b = random_graph(12, 0.3, 4, 9);
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.features(), b.features());
    }
}
