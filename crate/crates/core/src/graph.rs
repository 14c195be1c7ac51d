//! Undirected connected graphs with user-chosen edge orientation.
//!
//! The same type describes the physical transmission network and the
//! communication network the controllers use to exchange prices. Each edge
//! is stored as `(positive end, negative end)`; the orientation only fixes
//! sign conventions and never changes the Laplacian.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::pseudo_inverse;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge {edge} references node {node}, but the graph has {n} nodes")]
    NodeOutOfRange { edge: usize, node: usize, n: usize },
    #[error("edge {edge} is a self-loop on node {node}")]
    SelfLoop { edge: usize, node: usize },
    #[error("graph not connected")]
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl NetworkGraph {
    /// Builds a graph on `n` nodes. Fails on self-loops, out-of-range nodes
    /// or when the graph is not connected.
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        for (k, &(a, b)) in edges.iter().enumerate() {
            for node in [a, b] {
                if node >= n {
                    return Err(GraphError::NodeOutOfRange { edge: k, node, n });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop { edge: k, node: a });
            }
        }
        if !is_connected(n, &edges) {
            return Err(GraphError::Disconnected);
        }
        Ok(Self { n, edges })
    }

    /// Ring `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn ring(n: usize) -> Result<Self, GraphError> {
        let edges = match n {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::new(n, edges)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Number of independent cycles, `m - n + 1` for a connected graph.
    pub fn cycle_rank(&self) -> usize {
        self.edges.len() + 1 - self.n
    }

    /// Node-by-edge incidence matrix: `+1` at the positive end, `-1` at the
    /// negative end of each edge.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.edges.len());
        for (k, &(pos, neg)) in self.edges.iter().enumerate() {
            d[(pos, k)] = 1.0;
            d[(neg, k)] = -1.0;
        }
        d
    }

    /// `D Dᵀ`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let d = self.incidence();
        &d * d.transpose()
    }

    /// Same graph with edge `k` reversed.
    pub fn with_edge_flipped(&self, k: usize) -> Self {
        let mut edges = self.edges.clone();
        let (a, b) = edges[k];
        edges[k] = (b, a);
        Self { n: self.n, edges }
    }

    /// Minimum-norm edge vector `f` with `D f = r`. Exact whenever `1ᵀr = 0`.
    pub fn min_norm_flow(&self, r: &DVector<f64>) -> DVector<f64> {
        pseudo_inverse(&self.incidence()) * r
    }
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut adjacency = vec![Vec::new(); n];
    for &(a, b) in edges {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut visited = 1;
    while let Some(node) = queue.pop_front() {
        for &next in &adjacency[node] {
            if !seen[next] {
                seen[next] = true;
                visited += 1;
                queue.push_back(next);
            }
        }
    }
    visited == n
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ring4() -> NetworkGraph {
        NetworkGraph::new(4, vec![(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap()
    }

    #[test]
    fn single_edge_incidence_and_laplacian() {
        let g = NetworkGraph::new(2, vec![(0, 1)]).unwrap();
        let d = g.incidence();
        assert_eq!(d, DMatrix::from_row_slice(2, 1, &[1.0, -1.0]));
        assert_eq!(
            g.laplacian(),
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
        );
    }

    #[test]
    fn ring_incidence_rows_and_columns() {
        let d = ring4().incidence();
        assert_eq!(d.shape(), (4, 4));
        for col in d.column_iter() {
            assert_eq!(col.sum(), 0.0);
        }
        for row in d.row_iter() {
            assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&x| x == -1.0).count(), 1);
        }
    }

    #[test]
    fn ring_laplacian_by_hand() {
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(4, 4, &[
             2.0, -1.0,  0.0, -1.0,
            -1.0,  2.0, -1.0,  0.0,
             0.0, -1.0,  2.0, -1.0,
            -1.0,  0.0, -1.0,  2.0,
        ]);
        assert_eq!(ring4().laplacian(), expected);
    }

    #[test]
    fn laplacian_spectrum_of_connected_graph() {
        let g = NetworkGraph::new(5, vec![(0, 1), (1, 2), (2, 0), (2, 3), (4, 3)]).unwrap();
        let l = g.laplacian();
        let eig = l.clone().symmetric_eigen();
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(values[0].abs() < 1e-12);
        assert!(values[1] > 1e-6);
        let ones = DVector::from_element(5, 1.0);
        assert_eq!(l * ones, DVector::zeros(5));
    }

    #[test]
    fn construction_errors() {
        assert_eq!(NetworkGraph::new(0, vec![]), Err(GraphError::Empty));
        assert_eq!(
            NetworkGraph::new(3, vec![(0, 1)]),
            Err(GraphError::Disconnected)
        );
        assert_eq!(
            NetworkGraph::new(2, vec![(1, 1)]),
            Err(GraphError::SelfLoop { edge: 0, node: 1 })
        );
        assert_eq!(
            NetworkGraph::new(2, vec![(0, 2)]),
            Err(GraphError::NodeOutOfRange {
                edge: 0,
                node: 2,
                n: 2
            })
        );
    }

    #[test]
    fn min_norm_flow_solves_balanced_injection() {
        let g = ring4();
        let r = DVector::from_vec(vec![1.0, -0.5, 0.25, -0.75]);
        let f = g.min_norm_flow(&r);
        assert!((g.incidence() * &f - &r).amax() < 1e-12);
        // minimum norm: orthogonal to the cycle (1,1,1,1)
        assert!(f.sum().abs() < 1e-12);
    }

    // Transitive closure by repeated relaxation; independent of the BFS above.
    fn reachable_all(n: usize, edges: &[(usize, usize)]) -> bool {
        let mut reach = vec![vec![false; n]; n];
        for (i, row) in reach.iter_mut().enumerate() {
            row[i] = true;
        }
        for &(a, b) in edges {
            reach[a][b] = true;
            reach[b][a] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        reach[0].iter().all(|&r| r)
    }

    fn arb_edges() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (2usize..=8).prop_flat_map(|n| {
            let edge = (0..n, 0..n).prop_filter("no self loops", |(a, b)| a != b);
            (Just(n), proptest::collection::vec(edge, 0..12))
        })
    }

    proptest! {
        #[test]
        fn connectivity_matches_brute_force((n, edges) in arb_edges()) {
            let built = NetworkGraph::new(n, edges.clone());
            prop_assert_eq!(built.is_ok(), reachable_all(n, &edges));
        }

        #[test]
        fn incidence_laplacian_identities((n, edges) in arb_edges(), flip in 0usize..12) {
            let Ok(g) = NetworkGraph::new(n, edges) else { return Ok(()) };
            let d = g.incidence();
            let ones = DVector::from_element(n, 1.0);
            prop_assert_eq!(d.transpose() * ones, DVector::zeros(g.edge_count()));
            prop_assert_eq!(g.laplacian(), &d * d.transpose());
            if g.edge_count() > 0 {
                let flipped = g.with_edge_flipped(flip % g.edge_count());
                prop_assert_eq!(flipped.laplacian(), g.laplacian());
            }
        }
    }
}
