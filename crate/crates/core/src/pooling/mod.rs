//! Node-dropping and node-clustering pooling operators.
//!
//! Dropping operators score nodes, keep the top `k` (or a k-independent set)
//! and take the induced subgraph. Clustering operators learn a soft
//! assignment `S` and coarsen with `SᵀH` and `SᵀAS`. Each operator returns a
//! [`PoolOutcome`]; clustering operators attach their regularisers as
//! auxiliary losses.

mod cluster;
mod dropping;
mod kmis;
mod losses;
mod select;

pub use cluster::{cluster_assign, coarsen_cluster};
pub use dropping::{induced_adjacency, sag_pool, topk_pool};
pub use kmis::{kmis_pool, kmis_select, KmisSelection};
pub use losses::{diffpool_losses, dmon_losses, justbalance_loss, mincut_losses};
pub use select::{select_topk, topk_count};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{gcn_forward, glorot, Activation};
use crate::tensor::{Binding, ParamId, Params, Tape, Tensor};

/// Which rows of the input survive, or how they were merged.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// Kept node indices, strictly increasing.
    Indices(Vec<usize>),
    /// Row-stochastic `n×n'` assignment.
    Assignment(Tensor),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxLoss {
    pub name: &'static str,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolOutcome {
    pub h: Tensor,
    pub adj: Tensor,
    pub selection: Selection,
    pub aux: Vec<AuxLoss>,
}

impl PoolOutcome {
    pub fn indices(&self) -> Option<&[usize]> {
        match &self.selection {
            Selection::Indices(idx) => Some(idx),
            Selection::Assignment(_) => None,
        }
    }

    /// Checks the structural invariants of a pooling result produced from an
    /// `n`-node input.
    pub fn check_invariants(&self, tape: &Tape, n: usize, input_symmetric: bool) -> Result<()> {
        let (rows, _) = tape.shape(self.h);
        let fail = |m: String| Err(Error::Numeric(m));
        if rows == 0 || rows > n {
            return fail(format!("pooled size {rows} outside 1..={n}"));
        }
        if tape.shape(self.adj) != (rows, rows) {
            return fail(format!(
                "pooled adjacency {:?} for {rows} rows",
                tape.shape(self.adj)
            ));
        }
        match &self.selection {
            Selection::Indices(idx) => {
                if idx.len() != rows {
                    return fail("index count differs from pooled rows".into());
                }
                if idx.windows(2).any(|w| w[0] >= w[1]) || idx.iter().any(|&i| i >= n) {
                    return fail(format!("indices not strictly increasing in range: {idx:?}"));
                }
            }
            Selection::Assignment(s) => {
                let s = tape.value(*s);
                if s.shape() != (n, rows) {
                    return fail(format!("assignment shape {:?}", s.shape()));
                }
                for i in 0..n {
                    let total: f64 = s.row(i).iter().sum();
                    if (total - 1.0).abs() > 1e-6 || s.row(i).iter().any(|&v| v < 0.0) {
                        return fail(format!("assignment row {i} not stochastic"));
                    }
                }
            }
        }
        if input_symmetric && !tape.value(self.adj).is_symmetric(1e-9) {
            return fail("pooled adjacency not symmetric".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Dropping,
    Clustering,
}

/// Operator choice and its hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PoolSpec {
    TopK { ratio: f64 },
    Sag { ratio: f64 },
    Kmis { k: usize },
    DiffPool { clusters: usize },
    MinCut { clusters: usize },
    Dmon { clusters: usize },
    JustBalance { clusters: usize },
}

impl PoolSpec {
    pub fn family(&self) -> Family {
        match self {
            PoolSpec::TopK { .. } | PoolSpec::Sag { .. } | PoolSpec::Kmis { .. } => {
                Family::Dropping
            }
            _ => Family::Clustering,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PoolSpec::TopK { .. } => "topk",
            PoolSpec::Sag { .. } => "sag",
            PoolSpec::Kmis { .. } => "kmis",
            PoolSpec::DiffPool { .. } => "diffpool",
            PoolSpec::MinCut { .. } => "mincut",
            PoolSpec::Dmon { .. } => "dmon",
            PoolSpec::JustBalance { .. } => "justbalance",
        }
    }

    fn score_width(&self) -> usize {
        match *self {
            PoolSpec::TopK { .. } | PoolSpec::Sag { .. } | PoolSpec::Kmis { .. } => 1,
            PoolSpec::DiffPool { clusters }
            | PoolSpec::MinCut { clusters }
            | PoolSpec::Dmon { clusters }
            | PoolSpec::JustBalance { clusters } => clusters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PoolSpec::TopK { ratio } | PoolSpec::Sag { ratio }
                if !(ratio > 0.0 && ratio <= 1.0) =>
            {
                Err(Error::Config(format!(
                    "pooling ratio {ratio} outside (0, 1]"
                )))
            }
            PoolSpec::Kmis { k: 0 } => Err(Error::Config("kmis k must be >= 1".into())),
            _ if self.score_width() == 0 => Err(Error::Config("cluster count must be >= 1".into())),
            _ => Ok(()),
        }
    }
}

/// `max(1, ⌈avg_nodes / 4⌉)`.
pub fn default_cluster_count(avg_nodes: f64) -> usize {
    ((avg_nodes / 4.0).ceil() as usize).max(1)
}

/// A pooling operator bound to its learnable parameters: the projection
/// vector for TopK, or the scoring / assignment GCN for the others.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolLayer {
    pub spec: PoolSpec,
    pub weight: ParamId,
}

impl PoolLayer {
    pub fn new(
        params: &mut Params,
        name: &str,
        spec: PoolSpec,
        d_in: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let weight = params.add(
            format!("{name}.{}", spec.name()),
            glorot(d_in, spec.score_width(), rng),
        );
        Ok(Self { spec, weight })
    }

    /// Pools one graph. `adj` is the raw (possibly weighted) adjacency and
    /// `a_hat` its GCN normalisation.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        h: Tensor,
        adj: Tensor,
        a_hat: Tensor,
    ) -> Result<PoolOutcome> {
        let w = bind.get(self.weight);
        match self.spec {
            PoolSpec::TopK { ratio } => topk_pool(tape, h, adj, w, ratio),
            PoolSpec::Sag { ratio } => sag_pool(tape, h, adj, a_hat, w, ratio),
            PoolSpec::Kmis { k } => {
                let raw = gcn_forward(tape, h, a_hat, w, Activation::None)?;
                let score = tape.tanh(raw)?;
                let gated = tape.mul_col(h, score)?;
                let scores = tape.value(score).as_slice().to_vec();
                kmis_pool(tape, gated, adj, &scores, k)
            }
            PoolSpec::DiffPool { .. }
            | PoolSpec::MinCut { .. }
            | PoolSpec::Dmon { .. }
            | PoolSpec::JustBalance { .. } => {
                // Graphs smaller than C use only the first n clusters, so n' ≤ n.
                let n = tape.shape(h).0;
                let w = if n < tape.shape(w).1 {
                    let wt = tape.transpose(w)?;
                    let keep: Vec<usize> = (0..n).collect();
                    let cut = tape.slice_rows(wt, &keep)?;
                    tape.transpose(cut)?
                } else {
                    w
                };
                let s = cluster_assign(tape, h, a_hat, w)?;
                let (hp, ap) = coarsen_cluster(tape, h, adj, s)?;
                let aux = match self.spec {
                    PoolSpec::DiffPool { .. } => {
                        let (link, entropy) = diffpool_losses(tape, adj, s)?;
                        vec![
                            AuxLoss {
                                name: "link",
                                value: link,
                            },
                            AuxLoss {
                                name: "entropy",
                                value: entropy,
                            },
                        ]
                    }
                    PoolSpec::MinCut { .. } => {
                        let (cut, ortho) = mincut_losses(tape, adj, s)?;
                        vec![
                            AuxLoss {
                                name: "cut",
                                value: cut,
                            },
                            AuxLoss {
                                name: "ortho",
                                value: ortho,
                            },
                        ]
                    }
                    PoolSpec::Dmon { .. } => {
                        let (modularity, collapse) = dmon_losses(tape, adj, s)?;
                        vec![
                            AuxLoss {
                                name: "modularity",
                                value: modularity,
                            },
                            AuxLoss {
                                name: "collapse",
                                value: collapse,
                            },
                        ]
                    }
                    _ => vec![AuxLoss {
                        name: "balance",
                        value: justbalance_loss(tape, s)?,
                    }],
                };
                Ok(PoolOutcome {
                    h: hp,
                    adj: ap,
                    selection: Selection::Assignment(s),
                    aux,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{constant_features, Graph};
    use crate::layers::gcn_norm;
    use crate::tensor::Matrix;
    use proptest::prelude::*;
    use rand::Rng;

    fn specs() -> [PoolSpec; 7] {
        [
            PoolSpec::TopK { ratio: 0.5 },
            PoolSpec::Sag { ratio: 0.3 },
            PoolSpec::Kmis { k: 1 },
            PoolSpec::DiffPool { clusters: 3 },
            PoolSpec::MinCut { clusters: 2 },
            PoolSpec::Dmon { clusters: 3 },
            PoolSpec::JustBalance { clusters: 2 },
        ]
    }

    #[test]
    fn validate_rejects_bad_hyperparameters() {
        assert!(PoolSpec::TopK { ratio: 0.0 }.validate().is_err());
        assert!(PoolSpec::Sag { ratio: 1.5 }.validate().is_err());
        assert!(PoolSpec::Kmis { k: 0 }.validate().is_err());
        assert!(PoolSpec::MinCut { clusters: 0 }.validate().is_err());
        assert!(PoolSpec::TopK { ratio: 1.0 }.validate().is_ok());
    }

    #[test]
    fn default_cluster_counts() {
        assert_eq!(default_cluster_count(17.93), 5);
        assert_eq!(default_cluster_count(0.0), 1);
        assert_eq!(default_cluster_count(4.0), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn outcomes_satisfy_invariants(n in 1usize..12, op in 0usize..7, seed in any::<u64>()) {
            let mut rng = crate::rng::seeded(seed);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.gen_bool(0.3) {
                        edges.push((i, j));
                    }
                }
            }
            let x = Matrix::from_fn(n, 4, |_, _| rng.gen_range(-1.0..1.0));
            let g = Graph::from_edges(n, &edges, constant_features(n)).unwrap();
            let a = g.dense_adjacency();
            let mut params = Params::new();
            let layer = PoolLayer::new(&mut params, "pool", specs()[op], 4, &mut rng).unwrap();
            let mut tape = Tape::new();
            let bind = params.bind(&mut tape);
            let h = tape.constant(x);
            let adj = tape.constant(a.clone());
            let a_hat = tape.constant(gcn_norm(&a));
            let out = layer.forward(&mut tape, &bind, h, adj, a_hat).unwrap();
            out.check_invariants(&tape, n, true).unwrap();
            match &out.selection {
                Selection::Indices(idx) if op < 2 => {
                    prop_assert_eq!(tape.value(out.adj), &a.submatrix(idx));
                }
                Selection::Assignment(s) => {
                    let s = tape.value(*s);
                    let want = s.transpose().matmul(&a).unwrap().matmul(s).unwrap();
                    prop_assert!(tape.value(out.adj).max_abs_diff(&want) < 1e-9);
                }
                _ => {}
            }
            for aux in &out.aux {
                prop_assert!(tape.value(aux.value).item().is_finite());
            }
        }
    }
}
