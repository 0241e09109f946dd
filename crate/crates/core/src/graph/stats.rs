use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Marker for unreachable nodes in [`bfs_distances`].
pub const UNREACHABLE: usize = usize::MAX;

pub fn bfs_distances(g: &Graph, source: usize) -> Vec<usize> {
    let mut dist = vec![UNREACHABLE; g.n()];
    let mut queue = VecDeque::new();
    dist[source] = 0;
    queue.push_back(source);
    while let Some(v) = queue.pop_front() {
        for &u in g.neighbors(v) {
            if dist[u] == UNREACHABLE {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Component id per node; ids follow the lowest node index in each component.
pub fn connected_components(g: &Graph) -> Vec<usize> {
    let mut comp = vec![UNREACHABLE; g.n()];
    let mut next = 0;
    for s in 0..g.n() {
        if comp[s] != UNREACHABLE {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(v) = stack.pop() {
            for &u in g.neighbors(v) {
                if comp[u] == UNREACHABLE {
                    comp[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Diameter of the largest connected component (ties go to the component
/// containing the lowest node index). Zero for empty or single-node graphs.
pub fn diameter_of_largest_component(g: &Graph) -> usize {
    if g.n() == 0 {
        return 0;
    }
    let comp = connected_components(g);
    let count = comp.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; count];
    for &c in &comp {
        sizes[c] += 1;
    }
    let largest = (0..count)
        .max_by_key(|&c| (sizes[c], std::cmp::Reverse(c)))
        .unwrap();
    (0..g.n())
        .filter(|&v| comp[v] == largest)
        .map(|v| {
            bfs_distances(g, v)
                .into_iter()
                .filter(|&d| d != UNREACHABLE)
                .max()
                .unwrap_or(0)
        })
        .max()
        .unwrap_or(0)
}

/// Local clustering coefficient per node; nodes of degree < 2 get 0.
pub fn local_clustering(g: &Graph) -> Vec<f64> {
    (0..g.n())
        .map(|v| {
            let nbrs = g.neighbors(v);
            let k = nbrs.len();
            if k < 2 {
                return 0.0;
            }
            let mut links = 0usize;
            for (a, &u) in nbrs.iter().enumerate() {
                for &w in &nbrs[a + 1..] {
                    if g.has_edge(u, w) {
                        links += 1;
                    }
                }
            }
            2.0 * links as f64 / (k * (k - 1)) as f64
        })
        .collect()
}

/// Undirected edge density `m / (n(n-1)/2)`; 0 for graphs with fewer than two nodes.
pub fn density(g: &Graph) -> f64 {
    let n = g.n();
    if n < 2 {
        return 0.0;
    }
    g.edge_count() as f64 / (n * (n - 1) / 2) as f64
}

/// `1 / Σ_u dist(v, u)` over the nodes reachable from `v`; isolated nodes get 0.
pub fn closeness_centrality(g: &Graph) -> Vec<f64> {
    (0..g.n())
        .map(|v| {
            let total: usize = bfs_distances(g, v)
                .into_iter()
                .filter(|&d| d != UNREACHABLE)
                .sum();
            if total == 0 {
                0.0
            } else {
                1.0 / total as f64
            }
        })
        .collect()
}

/// Closeness scaled by reachability (Wasserman–Faust):
/// `((r-1)/Σd) · ((r-1)/(n-1))`, where `r` counts nodes reachable from `v`
/// including itself. Coincides with `(n-1)/Σd` on connected graphs.
pub fn closeness_centrality_normalized(g: &Graph) -> Vec<f64> {
    let n = g.n();
    (0..n)
        .map(|v| {
            let reach: Vec<usize> = bfs_distances(g, v)
                .into_iter()
                .filter(|&d| d != UNREACHABLE)
                .collect();
            let total: usize = reach.iter().sum();
            if total == 0 || n < 2 {
                return 0.0;
            }
            let r1 = (reach.len() - 1) as f64;
            (r1 / total as f64) * (r1 / (n - 1) as f64)
        })
        .collect()
}

/// Per-dataset summary in the column order of the usual dataset tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub graph_count: usize,
    pub class_count: usize,
    pub avg_nodes: f64,
    /// Directed CSR entries per graph.
    pub avg_edges: f64,
    pub avg_diameter: f64,
    /// Mean over graphs of entries-per-node.
    pub avg_degree: f64,
    pub avg_clustering_coefficient: f64,
}

impl DatasetStats {
    pub const CSV_HEADER: &'static str =
        "graphs,classes,avg_nodes,avg_edges,avg_diameter,avg_degree,avg_cc";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.2}",
            self.graph_count,
            self.class_count,
            self.avg_nodes,
            self.avg_edges,
            self.avg_diameter,
            self.avg_degree,
            self.avg_clustering_coefficient
        )
    }
}

pub fn dataset_stats(graphs: &[Graph]) -> Result<DatasetStats> {
    if graphs.is_empty() {
        return Err(Error::Empty("dataset_stats needs at least one graph"));
    }
    let count = graphs.len() as f64;
    let mean = |f: &dyn Fn(&Graph) -> f64| graphs.iter().map(f).sum::<f64>() / count;
    let classes: BTreeSet<usize> = graphs.iter().filter_map(|g| g.target()?.class()).collect();
    Ok(DatasetStats {
        graph_count: graphs.len(),
        class_count: classes.len(),
        avg_nodes: mean(&|g| g.n() as f64),
        avg_edges: mean(&|g| g.entry_count() as f64),
        avg_diameter: mean(&|g| diameter_of_largest_component(g) as f64),
        avg_degree: mean(&|g| {
            if g.n() == 0 {
                0.0
            } else {
                g.entry_count() as f64 / g.n() as f64
            }
        }),
        avg_clustering_coefficient: mean(&|g| {
            let cc = local_clustering(g);
            if cc.is_empty() {
                0.0
            } else {
                cc.iter().sum::<f64>() / cc.len() as f64
            }
        }),
    })
}
