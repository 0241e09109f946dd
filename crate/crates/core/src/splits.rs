//! Random holdout, k-fold and key-ordered (out-of-distribution) partitions.
//!
//! Ordered generators sort by a key with ties broken by the lower index,
//! give the first `⌊a·n⌋` items to train and the last `⌊b·n⌋` to test, and
//! leave the remainder to validation.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{closeness_centrality, closeness_centrality_normalized, density, Graph};
use crate::rng::{stream, Stream};

/// Guard against quotas such as `0.57 · 100 = 56.999…`.
const FLOOR_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Random,
    Kfold,
    Size,
    Density,
    Degree,
    Closeness,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Random => "random",
            Provenance::Kfold => "kfold",
            Provenance::Size => "size",
            Provenance::Density => "density",
            Provenance::Degree => "degree",
            Provenance::Closeness => "closeness",
        }
    }
}

/// Disjoint index parts covering `0..n`. Each part is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub provenance: Provenance,
    pub seed: Option<u64>,
}

impl Split {
    fn new(mut parts: [Vec<usize>; 3], provenance: Provenance, seed: Option<u64>) -> Self {
        parts.iter_mut().for_each(|p| p.sort_unstable());
        let [train, val, test] = parts;
        Self {
            train,
            val,
            test,
            provenance,
            seed,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    pub fn len(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Partition of `0..n`; every part non-empty except validation in k-fold.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "index {i} repeated or out of range"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(
                "split does not cover every item".into(),
            ));
        }
        let val_ok = !self.val.is_empty() || self.provenance == Provenance::Kfold;
        if self.train.is_empty() || self.test.is_empty() || !val_ok {
            return Err(Error::Empty("split has an empty part"));
        }
        Ok(())
    }

    /// Writes `train.txt`, `val.txt` and `test.txt`, one index per line.
    pub fn write_index_files(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, part) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            let mut text = String::new();
            for i in part {
                text.push_str(&i.to_string());
                text.push('\n');
            }
            fs::write(dir.join(format!("{name}.txt")), text)?;
        }
        Ok(())
    }
}

fn quota(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + FLOOR_GUARD).floor() as usize
}

/// Uniform shuffle, then floor quotas for validation and test; the
/// remainder goes to train.
pub fn random_split(n: usize, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|&f| f.is_nan() || f <= 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    let n_val = quota(fractions[1], n);
    let n_test = quota(fractions[2], n);
    let n_train = n.saturating_sub(n_val + n_test);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Empty("random split leaves an empty part"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Stream::Split));
    let test = order.split_off(n - n_test);
    let val = order.split_off(n_train);
    Ok(Split::new(
        [order, val, test],
        Provenance::Random,
        Some(seed),
    ))
}

/// `k` folds over a seeded permutation; the first `n mod k` folds hold one
/// extra item. Validation parts are empty.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "kfold needs k >= 2, got {k}"
        )));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "kfold needs at least {k} items, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Stream::Split));
    let mut bounds = vec![0];
    for f in 0..k {
        bounds.push(bounds[f] + n / k + usize::from(f < n % k));
    }
    Ok((0..k)
        .map(|f| {
            let test = order[bounds[f]..bounds[f + 1]].to_vec();
            let train = order[..bounds[f]]
                .iter()
                .chain(&order[bounds[f + 1]..])
                .copied()
                .collect();
            Split::new([train, Vec::new(), test], Provenance::Kfold, Some(seed))
        })
        .collect())
}

/// Items ordered by key (ascending or descending, ties to the lower index).
pub fn key_order(keys: &[f64], descending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| {
        let by_key = if descending {
            keys[b].total_cmp(&keys[a])
        } else {
            keys[a].total_cmp(&keys[b])
        };
        by_key.then(a.cmp(&b))
    });
    order
}

/// First `⌊train·n⌋` of the key order train, last `⌊test·n⌋` test.
pub fn ordered_split(
    keys: &[f64],
    descending: bool,
    train: f64,
    test: f64,
    provenance: Provenance,
) -> Result<Split> {
    let n = keys.len();
    let order = key_order(keys, descending);
    let n_train = quota(train, n);
    let n_test = quota(test, n);
    if n_train == 0 || n_test == 0 || n_train + n_test >= n {
        return Err(Error::Empty("ordered split leaves an empty part"));
    }
    let parts = [
        order[..n_train].to_vec(),
        order[n_train..n - n_test].to_vec(),
        order[n - n_test..].to_vec(),
    ];
    Ok(Split::new(parts, provenance, None))
}

fn need(count: usize, min: usize, what: &str) -> Result<()> {
    if count < min {
        return Err(Error::InvalidArgument(format!(
            "{what} split needs at least {min} items, got {count}"
        )));
    }
    Ok(())
}

pub fn size_keys(graphs: &[Graph]) -> Vec<f64> {
    graphs.iter().map(|g| g.n() as f64).collect()
}

pub fn density_keys(graphs: &[Graph]) -> Vec<f64> {
    graphs.iter().map(density).collect()
}

pub fn degree_keys(g: &Graph) -> Vec<f64> {
    g.degrees().into_iter().map(|d| d as f64).collect()
}

/// Smallest 50% of graphs train, largest 20% test.
pub fn size_split(graphs: &[Graph]) -> Result<Split> {
    need(graphs.len(), 5, "size")?;
    ordered_split(&size_keys(graphs), false, 0.5, 0.2, Provenance::Size)
}

/// Sparsest 50% of graphs train, densest 20% test.
pub fn density_split(graphs: &[Graph]) -> Result<Split> {
    need(graphs.len(), 5, "density")?;
    ordered_split(&density_keys(graphs), false, 0.5, 0.2, Provenance::Density)
}

/// Highest-degree 50% of nodes train, lowest-degree 25% test.
pub fn degree_split(g: &Graph) -> Result<Split> {
    need(g.n(), 4, "degree")?;
    ordered_split(&degree_keys(g), true, 0.5, 0.25, Provenance::Degree)
}

/// Closeness convention used as the split key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosenessKind {
    /// `1 / Σ dist` over reachable nodes.
    #[default]
    Raw,
    /// Reachability-scaled `(r-1)/Σd · (r-1)/(n-1)`.
    Normalized,
}

pub fn closeness_keys(g: &Graph, kind: ClosenessKind) -> Vec<f64> {
    match kind {
        ClosenessKind::Raw => closeness_centrality(g),
        ClosenessKind::Normalized => closeness_centrality_normalized(g),
    }
}

/// Lowest-closeness 50% of nodes train, highest 25% test.
pub fn closeness_split(g: &Graph, kind: ClosenessKind) -> Result<Split> {
    need(g.n(), 4, "closeness")?;
    ordered_split(
        &closeness_keys(g, kind),
        false,
        0.5,
        0.25,
        Provenance::Closeness,
    )
}

/// Part sizes and key means, for comparison against published tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub provenance: Provenance,
    pub sizes: [usize; 3],
    pub key_means: [f64; 3],
    /// Equal keys straddle a part boundary, so the index tie rule decided membership.
    pub boundary_tie: bool,
}

impl SplitSummary {
    pub const CSV_HEADER: &'static str =
        "provenance,train_size,val_size,test_size,train_key,val_key,test_key,boundary_tie";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.4},{:.4},{:.4},{}",
            self.provenance.name(),
            self.sizes[0],
            self.sizes[1],
            self.sizes[2],
            self.key_means[0],
            self.key_means[1],
            self.key_means[2],
            self.boundary_tie
        )
    }
}

fn mean_of(keys: &[f64], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    idx.iter().map(|&i| keys[i]).sum::<f64>() / idx.len() as f64
}

pub fn summarize(split: &Split, keys: &[f64]) -> SplitSummary {
    let range = |p: &[usize]| {
        let lo = p.iter().map(|&i| keys[i]).fold(f64::INFINITY, f64::min);
        let hi = p.iter().map(|&i| keys[i]).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let parts = [&split.train, &split.val, &split.test];
    let ranges: Vec<(f64, f64)> = parts
        .iter()
        .filter(|p| !p.is_empty())
        .map(|p| range(p))
        .collect();
    let mut boundary_tie = false;
    for (i, a) in ranges.iter().enumerate() {
        for b in &ranges[i + 1..] {
            // Overlapping closed ranges of ordered parts can only touch at equal keys.
            if a.0 <= b.1 && b.0 <= a.1 {
                boundary_tie = true;
            }
        }
    }
    SplitSummary {
        provenance: split.provenance,
        sizes: split.sizes(),
        key_means: [
            mean_of(keys, &split.train),
            mean_of(keys, &split.val),
            mean_of(keys, &split.test),
        ],
        boundary_tie,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::constant_features;
    use crate::graph::fixtures::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn random_split_sizes() {
        assert_eq!(
            random_split(100, [0.7, 0.15, 0.15], 3).unwrap().sizes(),
            [70, 15, 15]
        );
        assert_eq!(
            random_split(10, [0.8, 0.1, 0.1], 3).unwrap().sizes(),
            [8, 1, 1]
        );
        assert_eq!(
            random_split(188, [0.7, 0.15, 0.15], 0).unwrap().sizes(),
            [132, 28, 28]
        );
        assert_eq!(
            random_split(100, [0.43, 0.28, 0.29], 0).unwrap().sizes(),
            [43, 28, 29]
        );
    }

    #[test]
    fn random_split_is_deterministic_and_valid() {
        let a = random_split(37, [0.7, 0.15, 0.15], 9).unwrap();
        assert_eq!(a, random_split(37, [0.7, 0.15, 0.15], 9).unwrap());
        assert_ne!(a, random_split(37, [0.7, 0.15, 0.15], 10).unwrap());
        a.validate(37).unwrap();
    }

    #[test]
    fn random_split_errors() {
        assert!(random_split(3, [0.7, 0.15, 0.15], 0).is_err());
        assert!(random_split(100, [0.7, 0.2, 0.2], 0).is_err());
        assert!(random_split(100, [1.0, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn kfold_sizes_and_cover() {
        let folds = kfold(10, 5, 1).unwrap();
        assert!(folds
            .iter()
            .all(|f| f.test.len() == 2 && f.train.len() == 8));
        let folds = kfold(11, 5, 1).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2, 2, 2]);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        folds.iter().for_each(|f| f.validate(11).unwrap());
        assert!(kfold(4, 5, 0).is_err());
        assert!(kfold(4, 1, 0).is_err());
    }

    #[test]
    fn size_split_on_counts_one_to_ten() {
        let graphs: Vec<Graph> = (1..=10)
            .map(|n| Graph::edgeless(constant_features(n)))
            .collect();
        let s = size_split(&graphs).unwrap();
        assert_eq!(s.train, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.val, vec![5, 6, 7]);
        assert_eq!(s.test, vec![8, 9]);
    }

    #[test]
    fn equal_sizes_fall_back_to_index_order() {
        let graphs: Vec<Graph> = (0..6).map(|_| path(3)).collect();
        let s = size_split(&graphs).unwrap();
        assert_eq!(
            (s.train.clone(), s.val.clone(), s.test.clone()),
            (vec![0, 1, 2], vec![3, 4], vec![5])
        );
        assert!(summarize(&s, &size_keys(&graphs)).boundary_tie);
    }

    #[test]
    fn density_split_orders_by_hand_densities() {
        let edgeless = Graph::edgeless(constant_features(3));
        let graphs = vec![complete(3), path(3), edgeless.clone(), path(4), edgeless];
        // Densities: 1, 2/3, 0, 1/2, 0.
        let s = density_split(&graphs).unwrap();
        assert_eq!(s.train, vec![2, 4]);
        assert_eq!(s.val, vec![1, 3]);
        assert_eq!(s.test, vec![0]);
    }

    #[test]
    fn degree_split_puts_hub_in_train() {
        let s = degree_split(&star(4)).unwrap();
        assert_eq!(s.train, vec![0, 1]);
        assert_eq!(s.test, vec![4]);
        let c = degree_split(&cycle(8)).unwrap();
        assert_eq!(c.train, vec![0, 1, 2, 3]);
        assert_eq!(c.test, vec![6, 7]);
    }

    #[test]
    fn closeness_split_on_small_paths() {
        let keys = closeness_keys(&path(3), ClosenessKind::Raw);
        let order = key_order(&keys, false);
        assert_eq!(order, vec![0, 2, 1]);
        let s = closeness_split(&path(4), ClosenessKind::Raw).unwrap();
        assert_eq!(s.train, vec![0, 3]);
        assert_eq!(s.test, vec![2]);
        assert!(closeness_split(&path(3), ClosenessKind::Raw).is_err());
    }

    #[test]
    fn summary_reports_means() {
        let graphs: Vec<Graph> = (1..=10)
            .map(|n| Graph::edgeless(constant_features(n)))
            .collect();
        let s = size_split(&graphs).unwrap();
        let sum = summarize(&s, &size_keys(&graphs));
        assert_eq!(sum.key_means, [3.0, 7.0, 9.5]);
        assert!(!sum.boundary_tie);
        assert_eq!(sum.to_csv_row(), "size,5,3,2,3.0000,7.0000,9.5000,false");
    }

    #[test]
    fn index_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let s = random_split(20, [0.7, 0.15, 0.15], 2).unwrap();
        s.write_index_files(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("test.txt")).unwrap();
        let parsed: Vec<usize> = text.lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(parsed, s.test);
    }

    fn check_ordered(
        split: &Split,
        keys: &[f64],
        descending: bool,
        train: f64,
        test: f64,
    ) -> std::result::Result<(), TestCaseError> {
        let n = keys.len();
        split
            .validate(n)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(
            split.train.len(),
            (train * n as f64 + 1e-9).floor() as usize
        );
        prop_assert_eq!(split.test.len(), (test * n as f64 + 1e-9).floor() as usize);
        let sign = if descending { -1.0 } else { 1.0 };
        let max_train = split
            .train
            .iter()
            .map(|&i| sign * keys[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let min_val = split
            .val
            .iter()
            .map(|&i| sign * keys[i])
            .fold(f64::INFINITY, f64::min);
        let max_val = split
            .val
            .iter()
            .map(|&i| sign * keys[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let min_test = split
            .test
            .iter()
            .map(|&i| sign * keys[i])
            .fold(f64::INFINITY, f64::min);
        prop_assert!(max_train <= min_val && max_val <= min_test && max_train <= min_test);
        Ok(())
    }

    fn random_graph(rng: &mut impl Rng, n: usize) -> Graph {
        let p = rng.gen_range(0.05..0.8);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        Graph::from_edges(n, &edges, constant_features(n)).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn every_generator_partitions(seed in any::<u64>(), count in 5usize..40) {
            let mut rng = crate::rng::seeded(seed);
            let graphs: Vec<Graph> = (0..count).map(|_| {
                let n = rng.gen_range(1..12);
                random_graph(&mut rng, n)
            }).collect();
            check_ordered(&size_split(&graphs).unwrap(), &size_keys(&graphs), false, 0.5, 0.2)?;
            check_ordered(&density_split(&graphs).unwrap(), &density_keys(&graphs), false, 0.5, 0.2)?;

            let n = rng.gen_range(4..30);
            let g = random_graph(&mut rng, n);
            check_ordered(&degree_split(&g).unwrap(), &degree_keys(&g), true, 0.5, 0.25)?;
            for kind in [ClosenessKind::Raw, ClosenessKind::Normalized] {
                check_ordered(&closeness_split(&g, kind).unwrap(), &closeness_keys(&g, kind), false, 0.5, 0.25)?;
            }

            if count >= 7 {
                let r = random_split(count, [0.7, 0.15, 0.15], seed).unwrap();
                r.validate(count).unwrap();
                prop_assert_eq!(r.val.len(), (0.15 * count as f64 + 1e-9).floor() as usize);
                prop_assert_eq!(r.test.len(), r.val.len());
            }
            let folds = kfold(count, 5, seed).unwrap();
            let mut seen = vec![0; count];
            for f in &folds {
                f.validate(count).unwrap();
                f.test.iter().for_each(|&i| seen[i] += 1);
                prop_assert!(f.test.len() == count / 5 || f.test.len() == count / 5 + 1);
            }
            prop_assert!(seen.iter().all(|&s| s == 1));
        }
    }
}
