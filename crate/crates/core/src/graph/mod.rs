//! Immutable attributed graphs in CSR form.

mod batch;
mod io;
mod stats;

pub use batch::GraphBatch;
pub use io::{
    load_edgelist_graph, load_tudataset, load_tudataset_as, write_edgelist_graph, TargetKind,
};
pub use stats::{
    bfs_distances, closeness_centrality, closeness_centrality_normalized, connected_components,
    dataset_stats, density, diameter_of_largest_component, local_clustering, DatasetStats,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Graph-level supervision target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Class(usize),
    Value(f64),
}

impl Target {
    pub fn class(self) -> Option<usize> {
        match self {
            Target::Class(c) => Some(c),
            Target::Value(_) => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Target::Class(c) => c as f64,
            Target::Value(v) => v,
        }
    }
}

/// Undirected simple graph stored as symmetric CSR, plus node features.
///
/// Invariants: column indices are strictly increasing within a row, every
/// entry `(i, j)` has its mirror `(j, i)`, and there are no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    x: Matrix,
    node_labels: Option<Vec<usize>>,
    target: Option<Target>,
}

impl Graph {
    /// Builds a graph from undirected edge pairs. Pairs are symmetrised and
    /// deduplicated; self-loops are dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], x: Matrix) -> Result<Self> {
        if x.rows() != n {
            return Err(Error::Ingestion(format!(
                "feature matrix has {} rows for {n} nodes",
                x.rows()
            )));
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut row in adj {
            row.sort_unstable();
            row.dedup();
            col_idx.extend(row);
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            row_ptr,
            col_idx,
            x,
            node_labels: None,
            target: None,
        })
    }

    /// Graph without edges.
    pub fn edgeless(x: Matrix) -> Self {
        let n = x.rows();
        Self {
            row_ptr: vec![0; n + 1],
            col_idx: Vec::new(),
            x,
            node_labels: None,
            target: None,
        }
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::Ingestion(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.n()
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = Some(target);
        self
    }

    pub fn with_features(&self, x: Matrix) -> Result<Self> {
        if x.rows() != self.n() {
            return Err(Error::dim("with_features", self.x.shape(), x.shape()));
        }
        let mut g = self.clone();
        g.x = x;
        Ok(g)
    }

    /// Same nodes, features and labels with a new edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::from_edges(self.n(), edges, self.x.clone())?;
        g.node_labels = self.node_labels.clone();
        g.target = self.target;
        Ok(g)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Number of stored directed entries (twice the undirected edge count).
    #[inline]
    pub fn entry_count(&self) -> usize {
        self.col_idx.len()
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.col_idx.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n()).map(|i| self.degree(i)).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Undirected edges `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .copied()
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn features(&self) -> &Matrix {
        &self.x
    }

    pub fn feature_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn target(&self) -> Option<Target> {
        self.target
    }

    pub fn dense_adjacency(&self) -> Matrix {
        let n = self.n();
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for &j in self.neighbors(i) {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    /// Checks every CSR invariant; used after loading and perturbing.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.x.rows() != n {
            return Err(Error::Ingestion(
                "feature rows differ from node count".into(),
            ));
        }
        for i in 0..n {
            let row = self.neighbors(i);
            for w in row.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Ingestion(format!("row {i} not strictly increasing")));
                }
            }
            for &j in row {
                if j >= n {
                    return Err(Error::Ingestion(format!("entry ({i}, {j}) out of range")));
                }
                if j == i {
                    return Err(Error::Ingestion(format!("self-loop at {i}")));
                }
                if !self.has_edge(j, i) {
                    return Err(Error::Ingestion(format!("entry ({i}, {j}) has no mirror")));
                }
            }
        }
        Ok(())
    }

    /// Node-induced subgraph on `nodes` (kept in the given order).
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Self> {
        let mut pos = vec![usize::MAX; self.n()];
        for (k, &v) in nodes.iter().enumerate() {
            pos[v] = k;
        }
        let mut edges = Vec::new();
        for (k, &v) in nodes.iter().enumerate() {
            for &u in self.neighbors(v) {
                if pos[u] != usize::MAX && pos[u] > k {
                    edges.push((k, pos[u]));
                }
            }
        }
        let mut g = Self::from_edges(nodes.len(), &edges, self.x.select_rows(nodes))?;
        if let Some(l) = &self.node_labels {
            g.node_labels = Some(nodes.iter().map(|&v| l[v]).collect());
        }
        g.target = self.target;
        Ok(g)
    }
}

/// Feature matrix with a single constant-1 column.
pub fn constant_features(n: usize) -> Matrix {
    Matrix::filled(n, 1, 1.0)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn from_edges_symmetrises_and_dedups() {
        let g =
            Graph::from_edges(3, &[(0, 1), (1, 0), (1, 2), (2, 2)], constant_features(3)).unwrap();
        assert_eq!(g.entry_count(), 4);
        assert_eq!(g.neighbors(1), &[0, 2]);
        g.validate().unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        assert!(Graph::from_edges(2, &[(0, 2)], constant_features(2)).is_err());
    }

    #[test]
    fn induced_subgraph_keeps_internal_edges() {
        let g = path(4);
        let s = g.induced_subgraph(&[1, 2, 3]).unwrap();
        assert_eq!(s.n(), 3);
        assert_eq!(s.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn dense_adjacency_of_complete_graph() {
        let a = complete(3).dense_adjacency();
        assert_eq!(a.sum(), 6.0);
        assert_eq!(a.trace(), 0.0);
    }
}
