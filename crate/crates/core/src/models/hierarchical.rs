use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{task_loss, Prepared};
use crate::error::{Error, Result};
use crate::graph::{GraphBatch, Target};
use crate::layers::{gcn_norm_tensor, global_mean_readout, Activation, GcnLayer, Head, HeadKind};
use crate::pooling::{default_cluster_count, Family, PoolLayer, PoolSpec};
use crate::tensor::{Binding, Params, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalConfig {
    pub d_in: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub head: HeadKind,
    pub pools: [PoolSpec; 2],
}

impl HierarchicalConfig {
    /// Widths 64 and 32, with both stages derived from `pool` by [`stage_specs`].
    pub fn new(d_in: usize, head: HeadKind, pool: PoolSpec) -> Self {
        Self {
            d_in,
            hidden: 64,
            head_hidden: 32,
            head,
            pools: stage_specs(pool),
        }
    }
}

/// Dropping operators repeat their hyperparameter; clustering operators
/// shrink the cluster count again by `⌈C/4⌉` at the second stage.
pub fn stage_specs(first: PoolSpec) -> [PoolSpec; 2] {
    let next = |c: usize| default_cluster_count(c as f64);
    let second = match first {
        PoolSpec::DiffPool { clusters } => PoolSpec::DiffPool {
            clusters: next(clusters),
        },
        PoolSpec::MinCut { clusters } => PoolSpec::MinCut {
            clusters: next(clusters),
        },
        PoolSpec::Dmon { clusters } => PoolSpec::Dmon {
            clusters: next(clusters),
        },
        PoolSpec::JustBalance { clusters } => PoolSpec::JustBalance {
            clusters: next(clusters),
        },
        dropping => dropping,
    };
    [first, second]
}

/// One auxiliary term, averaged over the graphs of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxTerm {
    pub stage: usize,
    pub name: &'static str,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    /// `G×C` log-probabilities or `G×1` regression values.
    pub pred: Tensor,
    /// `G×hidden` readout rows fed into the head.
    pub embedding: Tensor,
    pub aux: Vec<AuxTerm>,
}

/// GCN → pool → GCN → pool → GCN → mean readout → MLP head.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel {
    pub config: HierarchicalConfig,
    pub params: Params,
    gcn: [GcnLayer; 3],
    pools: [PoolLayer; 2],
    head: Head,
}

impl HierarchicalModel {
    pub fn new(config: HierarchicalConfig, rng: &mut impl Rng) -> Result<Self> {
        if config
            .pools
            .iter()
            .any(|p| p.family() != config.pools[0].family())
        {
            return Err(Error::Config(
                "both pooling stages must use the same family".into(),
            ));
        }
        let mut params = Params::new();
        let h = config.hidden;
        let gcn0 = GcnLayer::new(&mut params, "gcn0", config.d_in, h, Activation::Relu, rng)?;
        let pool0 = PoolLayer::new(&mut params, "pool0", config.pools[0], h, rng)?;
        let gcn1 = GcnLayer::new(&mut params, "gcn1", h, h, Activation::Relu, rng)?;
        let pool1 = PoolLayer::new(&mut params, "pool1", config.pools[1], h, rng)?;
        let gcn2 = GcnLayer::new(&mut params, "gcn2", h, h, Activation::Relu, rng)?;
        let head = Head::new(&mut params, h, config.head_hidden, config.head, rng);
        Ok(Self {
            config,
            params,
            gcn: [gcn0, gcn1, gcn2],
            pools: [pool0, pool1],
            head,
        })
    }

    pub fn family(&self) -> Family {
        self.config.pools[0].family()
    }

    /// Pools every graph independently, then applies the head to the stacked readouts.
    pub fn forward(&self, tape: &mut Tape, bind: &Binding, graphs: &[&Prepared]) -> Result<Output> {
        if graphs.is_empty() {
            return Err(Error::Empty("forward needs at least one graph"));
        }
        let mut rows = Vec::with_capacity(graphs.len());
        let mut sums: Vec<(usize, &'static str, Vec<Tensor>)> = Vec::new();
        for g in graphs {
            if g.x.cols() != self.config.d_in {
                return Err(Error::dim(
                    "hierarchical_forward",
                    g.x.shape(),
                    (g.n(), self.config.d_in),
                ));
            }
            let mut h = tape.constant(g.x.clone());
            let mut adj = tape.constant(g.adj.clone());
            let mut a_hat = tape.constant(g.a_hat.clone());
            for stage in 0..2 {
                h = self.gcn[stage].forward(tape, bind, h, a_hat)?;
                let out = self.pools[stage].forward(tape, bind, h, adj, a_hat)?;
                for aux in out.aux {
                    match sums
                        .iter_mut()
                        .find(|(s, n, _)| *s == stage && *n == aux.name)
                    {
                        Some((_, _, v)) => v.push(aux.value),
                        None => sums.push((stage, aux.name, vec![aux.value])),
                    }
                }
                h = out.h;
                adj = out.adj;
                a_hat = gcn_norm_tensor(tape, adj)?;
            }
            h = self.gcn[2].forward(tape, bind, h, a_hat)?;
            let zeros = vec![0; tape.shape(h).0];
            rows.push(global_mean_readout(tape, h, &zeros, 1)?);
        }
        let embedding = tape.concat_rows(&rows)?;
        let pred = self.head.forward(tape, bind, embedding)?;
        let mut aux = Vec::with_capacity(sums.len());
        for (stage, name, values) in sums {
            let stacked = tape.concat_rows(&values)?;
            aux.push(AuxTerm {
                stage,
                name,
                value: tape.mean(stacked)?,
            });
        }
        Ok(Output {
            pred,
            embedding,
            aux,
        })
    }

    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        batch: &GraphBatch,
    ) -> Result<Output> {
        let graphs: Vec<Prepared> = batch.unbatch()?.iter().map(Prepared::new).collect();
        self.forward(tape, bind, &graphs.iter().collect::<Vec<_>>())
    }

    /// Task loss plus `aux_weight` times every auxiliary term.
    pub fn loss(
        &self,
        tape: &mut Tape,
        out: &Output,
        targets: &[Option<Target>],
        aux_weight: f64,
    ) -> Result<Tensor> {
        let mut total = task_loss(tape, self.config.head, out.pred, targets)?;
        for term in &out.aux {
            let weighted = tape.scale(term.value, aux_weight)?;
            total = tape.add(total, weighted)?;
        }
        Ok(total)
    }

    /// Rebinds the layer handles onto a loaded parameter set.
    pub(crate) fn with_params(mut self, params: Params) -> Result<Self> {
        super::checkpoint::check_compatible(&self.params, &params)?;
        self.params = params;
        Ok(self)
    }
}
