//! Seeded structural and label noise. Every budget is exact:
//! `round(rate · m)` undirected edges or `round(rate · n)` nodes.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{stream, Stream};
use crate::tensor::Matrix;

pub const DEFAULT_KNN_K: usize = 5;

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "perturbation rate {rate} outside [0, 1]"
        )))
    }
}

fn budget(rate: f64, count: usize) -> usize {
    ((rate * count as f64).round() as usize).min(count)
}

/// Adds `round(rate·m)` distinct uniformly drawn non-edges, or every
/// non-edge when fewer exist.
pub fn add_edges(g: &Graph, rate: f64, seed: u64) -> Result<Graph> {
    check_rate(rate)?;
    let n = g.n();
    let want = budget(rate, g.edge_count());
    let pairs = n * n.saturating_sub(1) / 2;
    let free = pairs - g.edge_count();
    if want == 0 {
        return Ok(g.clone());
    }
    let mut rng = stream(seed, Stream::Perturb);
    let mut edges: Vec<(usize, usize)> = g.edges().collect();
    if want >= free || free <= 4 * want {
        let mut candidates = Vec::with_capacity(free);
        for i in 0..n {
            for j in i + 1..n {
                if !g.has_edge(i, j) {
                    candidates.push((i, j));
                }
            }
        }
        let take = want.min(free);
        edges.extend(
            sample(&mut rng, candidates.len(), take)
                .into_iter()
                .map(|k| candidates[k]),
        );
    } else {
        let mut chosen = HashSet::with_capacity(want);
        let mut order = Vec::with_capacity(want);
        while order.len() < want {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            let pair = (i.min(j), i.max(j));
            if i != j && !g.has_edge(i, j) && chosen.insert(pair) {
                order.push(pair);
            }
        }
        edges.extend(order);
    }
    g.with_edges(&edges)
}

/// Removes `round(rate·m)` uniformly chosen undirected edges.
pub fn drop_edges(g: &Graph, rate: f64, seed: u64) -> Result<Graph> {
    check_rate(rate)?;
    let edges: Vec<(usize, usize)> = g.edges().collect();
    let drop = budget(rate, edges.len());
    let mut rng = stream(seed, Stream::Perturb);
    let mut gone = vec![false; edges.len()];
    for k in sample(&mut rng, edges.len(), drop) {
        gone[k] = true;
    }
    let kept: Vec<_> = edges
        .iter()
        .zip(&gone)
        .filter(|(_, &d)| !d)
        .map(|(e, _)| *e)
        .collect();
    g.with_edges(&kept)
}

/// Zeroes the feature rows of `round(rate·n)` uniformly chosen nodes.
pub fn mask_features(g: &Graph, rate: f64, seed: u64) -> Result<Graph> {
    check_rate(rate)?;
    let n = g.n();
    let mut rng = stream(seed, Stream::Perturb);
    let mut x = g.features().clone();
    for v in sample(&mut rng, n, budget(rate, n)) {
        x.row_mut(v).iter_mut().for_each(|e| *e = 0.0);
    }
    g.with_features(x)
}

/// Replaces the structure by the symmetrised k-nearest-neighbour graph under
/// Euclidean feature distance; distance ties go to the lower index.
pub fn knn_rewire(g: &Graph, k: usize) -> Result<Graph> {
    let n = g.n();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "knn k={k} needs 1 <= k < n={n}"
        )));
    }
    let x = g.features();
    let sq: Vec<f64> = (0..n)
        .map(|i| x.row(i).iter().map(|v| v * v).sum())
        .collect();
    let mut edges = Vec::with_capacity(n * k);
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        dist.clear();
        for j in (0..n).filter(|&j| j != i) {
            let dot: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
            // Exact differences keep ties exact for identical rows.
            let d = if x.row(i) == x.row(j) {
                0.0
            } else {
                (sq[i] + sq[j] - 2.0 * dot).max(0.0)
            };
            dist.push((d, j));
        }
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(dist[..k].iter().map(|&(_, j)| (i, j)));
    }
    g.with_edges(&edges)
}

/// Moves `round(rate·n)` uniformly chosen labels to a uniformly chosen
/// different class.
pub fn flip_labels(
    labels: &[usize],
    rate: f64,
    class_count: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    check_rate(rate)?;
    if class_count < 2 {
        return Err(Error::InvalidArgument(format!(
            "flip_labels needs >= 2 classes, got {class_count}"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} >= class count {class_count}"
        )));
    }
    let mut rng = stream(seed, Stream::Perturb);
    let mut out = labels.to_vec();
    let mut chosen = sample(&mut rng, labels.len(), budget(rate, labels.len())).into_vec();
    chosen.sort_unstable();
    for v in chosen {
        let shift = rng.gen_range(1..class_count);
        out[v] = (labels[v] + shift) % class_count;
    }
    Ok(out)
}

/// A configured perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Perturbation {
    AddEdges { rate: f64 },
    DropEdges { rate: f64 },
    MaskFeatures { rate: f64 },
    Knn { k: usize },
    FlipLabels { rate: f64 },
}

impl Perturbation {
    pub fn name(&self) -> &'static str {
        match self {
            Perturbation::AddEdges { .. } => "add",
            Perturbation::DropEdges { .. } => "drop",
            Perturbation::MaskFeatures { .. } => "mask",
            Perturbation::Knn { .. } => "knn",
            Perturbation::FlipLabels { .. } => "flip",
        }
    }

    /// Parses `add|drop|mask|knn|flip` with its rate or `k`.
    pub fn parse(op: &str, rate: f64, k: usize) -> Result<Self> {
        Ok(match op {
            "add" => Perturbation::AddEdges { rate },
            "drop" => Perturbation::DropEdges { rate },
            "mask" => Perturbation::MaskFeatures { rate },
            "knn" => Perturbation::Knn { k },
            "flip" => Perturbation::FlipLabels { rate },
            other => return Err(Error::Config(format!("unknown perturbation {other}"))),
        })
    }

    /// Applies a structural or feature perturbation to one graph. Label
    /// flipping is dataset-level; see [`flip_labels`].
    pub fn apply(&self, g: &Graph, seed: u64) -> Result<Graph> {
        match *self {
            Perturbation::AddEdges { rate } => add_edges(g, rate, seed),
            Perturbation::DropEdges { rate } => drop_edges(g, rate, seed),
            Perturbation::MaskFeatures { rate } => mask_features(g, rate, seed),
            Perturbation::Knn { k } => knn_rewire(g, k),
            Perturbation::FlipLabels { .. } => Err(Error::Unsupported(
                "label flipping acts on label vectors, not graphs".into(),
            )),
        }
    }
}

/// Number of all-zero feature rows.
pub fn zero_rows(x: &Matrix) -> usize {
    (0..x.rows())
        .filter(|&i| x.row(i).iter().all(|&v| v == 0.0))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::constant_features;
    use crate::graph::fixtures::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn edge_set(g: &Graph) -> HashSet<(usize, usize)> {
        g.edges().collect()
    }

    #[test]
    fn zero_rate_is_identity() {
        let g = cycle(6);
        assert_eq!(add_edges(&g, 0.0, 1).unwrap(), g);
        assert_eq!(drop_edges(&g, 0.0, 1).unwrap(), g);
        assert_eq!(mask_features(&g, 0.0, 1).unwrap(), g);
        assert_eq!(flip_labels(&[0, 1, 1], 0.0, 2, 1).unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn path_three_gains_one_edge() {
        let g = path(3);
        let out = add_edges(&g, 0.5, 9).unwrap();
        assert_eq!(out.edge_count(), 3);
        assert!(edge_set(&g).is_subset(&edge_set(&out)));
    }

    #[test]
    fn complete_graph_is_saturated() {
        let g = complete(5);
        assert_eq!(add_edges(&g, 1.0, 3).unwrap(), g);
    }

    #[test]
    fn drop_counts() {
        assert_eq!(drop_edges(&cycle(7), 1.0, 0).unwrap().edge_count(), 0);
        let g = cycle(10);
        assert_eq!(drop_edges(&g, 0.5, 4).unwrap().edge_count(), 5);
    }

    #[test]
    fn mask_counts() {
        let g = Graph::edgeless(Matrix::filled(4, 3, 1.0));
        assert_eq!(zero_rows(mask_features(&g, 0.5, 2).unwrap().features()), 2);
        assert_eq!(zero_rows(mask_features(&g, 1.0, 2).unwrap().features()), 4);
    }

    #[test]
    fn knn_on_collinear_points_is_path() {
        let g = Graph::edgeless(Matrix::column(&[0.0, 1.0, 2.0]));
        let out = knn_rewire(&g, 1).unwrap();
        // Node 1 is equidistant from 0 and 2 and picks 0; 2 picks 1.
        assert_eq!(out.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn knn_ties_and_saturation() {
        let g = Graph::edgeless(constant_features(5));
        let out = knn_rewire(&g, 1).unwrap();
        assert_eq!(
            out.edges().collect::<Vec<_>>(),
            vec![(0, 1), (0, 2), (0, 3), (0, 4)]
        );
        assert_eq!(knn_rewire(&g, 4).unwrap().edge_count(), 10);
        assert!(knn_rewire(&g, 5).is_err());
        assert!(knn_rewire(&g, 0).is_err());
    }

    #[test]
    fn flip_counts_and_complement() {
        let labels: Vec<usize> = (0..10).map(|i| i % 4).collect();
        let out = flip_labels(&labels, 0.3, 4, 5).unwrap();
        assert_eq!(labels.iter().zip(&out).filter(|(a, b)| a != b).count(), 3);
        let bin = vec![0, 1, 0, 1, 1, 0];
        let out = flip_labels(&bin, 1.0, 2, 5).unwrap();
        assert!(bin.iter().zip(&out).all(|(a, b)| *b == 1 - a));
        assert!(flip_labels(&bin, 0.5, 1, 0).is_err());
        assert!(flip_labels(&bin, 1.5, 2, 0).is_err());
    }

    #[test]
    fn labels_survive_structural_noise() {
        let g = path(4).with_node_labels(vec![0, 1, 2, 0]).unwrap();
        let out = add_edges(&g, 0.4, 0).unwrap();
        assert_eq!(out.node_labels(), g.node_labels());
    }

    fn graph_strategy() -> impl Strategy<Value = Graph> {
        (2usize..=14, any::<u64>(), 0.0f64..0.9).prop_map(|(n, seed, p)| {
            let mut rng = crate::rng::seeded(seed);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.gen_bool(p) {
                        edges.push((i, j));
                    }
                }
            }
            let x = Matrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
            Graph::from_edges(n, &edges, x).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn budgets_are_exact(g in graph_strategy(), rate in 0.0f64..=1.0, seed in any::<u64>()) {
            let m = g.edge_count();
            let n = g.n();
            let b = (rate * m as f64).round() as usize;
            let free = n * (n - 1) / 2 - m;

            let added = add_edges(&g, rate, seed).unwrap();
            added.validate().unwrap();
            prop_assert_eq!(added.edge_count(), m + b.min(free));
            prop_assert!(edge_set(&g).is_subset(&edge_set(&added)));

            let dropped = drop_edges(&g, rate, seed).unwrap();
            dropped.validate().unwrap();
            prop_assert_eq!(dropped.edge_count(), m - b);
            prop_assert!(edge_set(&dropped).is_subset(&edge_set(&g)));

            let masked = mask_features(&g, rate, seed).unwrap();
            prop_assert_eq!(zero_rows(masked.features()), (rate * n as f64).round() as usize);
            prop_assert_eq!(masked.row_ptr(), g.row_ptr());

            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let flipped = flip_labels(&labels, rate, 3, seed).unwrap();
            let changed = labels.iter().zip(&flipped).filter(|(a, b)| a != b).count();
            prop_assert_eq!(changed, (rate * n as f64).round() as usize);

            // Same triple, same bits.
            prop_assert_eq!(add_edges(&g, rate, seed).unwrap(), added.clone());
            prop_assert_eq!(drop_edges(&g, rate, seed).unwrap(), dropped);
            prop_assert_eq!(flip_labels(&labels, rate, 3, seed).unwrap(), flipped);

            let round_trip = drop_edges(&added, rate, seed).unwrap();
            round_trip.validate().unwrap();
        }
    }
}
