//! End-to-end architectures: the hierarchical graph-level backbone and the
//! graph U-Net for node classification.

mod checkpoint;
mod hierarchical;
mod unet;

pub use checkpoint::{Architecture, Checkpoint};
pub use hierarchical::{stage_specs, AuxTerm, HierarchicalConfig, HierarchicalModel, Output};
pub use unet::{unpool, Fusion, UNetConfig, UNetModel, UNetOutput};

use crate::error::{Error, Result};
use crate::graph::{Graph, Target};
use crate::layers::{gcn_norm, mse_loss, nll_loss, HeadKind};
use crate::tensor::{Matrix, Tape, Tensor};

/// Dense per-graph inputs, computed once and reused every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub x: Matrix,
    pub adj: Matrix,
    pub a_hat: Matrix,
    pub target: Option<Target>,
}

impl Prepared {
    pub fn new(g: &Graph) -> Self {
        let adj = g.dense_adjacency();
        Self {
            x: g.features().clone(),
            a_hat: gcn_norm(&adj),
            adj,
            target: g.target(),
        }
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }
}

/// Class-index targets, or an error naming the first graph without one.
pub fn class_targets(targets: &[Option<Target>]) -> Result<Vec<usize>> {
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.and_then(Target::class)
                .ok_or_else(|| Error::InvalidArgument(format!("graph {i} has no class target")))
        })
        .collect()
}

/// NLL for classification heads, MSE for regression heads.
pub fn task_loss(
    tape: &mut Tape,
    kind: HeadKind,
    pred: Tensor,
    targets: &[Option<Target>],
) -> Result<Tensor> {
    match kind {
        HeadKind::Classification { .. } => nll_loss(tape, pred, &class_targets(targets)?),
        HeadKind::Regression => {
            let values: Result<Vec<f64>> = targets
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    t.map(Target::as_f64)
                        .ok_or_else(|| Error::InvalidArgument(format!("graph {i} has no target")))
                })
                .collect();
            mse_loss(tape, pred, &values?)
        }
    }
}
