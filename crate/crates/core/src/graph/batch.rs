use super::{Graph, Target};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Block-diagonal union of several graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    merged: Graph,
    indicator: Vec<usize>,
    offsets: Vec<usize>,
    targets: Vec<Option<Target>>,
}

impl GraphBatch {
    pub fn new(graphs: &[Graph]) -> Result<Self> {
        Self::from_refs(&graphs.iter().collect::<Vec<_>>())
    }

    pub fn from_refs(graphs: &[&Graph]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or(Error::Empty("cannot batch zero graphs"))?;
        let d = first.feature_dim();
        let total: usize = graphs.iter().map(|g| g.n()).sum();

        let mut offsets = Vec::with_capacity(graphs.len() + 1);
        let mut indicator = Vec::with_capacity(total);
        let mut edges = Vec::new();
        let mut features = Vec::with_capacity(total * d);
        let mut labels: Option<Vec<usize>> = first.node_labels().map(|_| Vec::with_capacity(total));
        let mut offset = 0;
        for (gid, g) in graphs.iter().enumerate() {
            if g.feature_dim() != d {
                return Err(Error::dim(
                    "batch_graphs",
                    (first.n(), d),
                    g.features().shape(),
                ));
            }
            offsets.push(offset);
            indicator.extend(std::iter::repeat_n(gid, g.n()));
            edges.extend(g.edges().map(|(i, j)| (i + offset, j + offset)));
            features.extend_from_slice(g.features().as_slice());
            match (&mut labels, g.node_labels()) {
                (Some(acc), Some(l)) => acc.extend_from_slice(l),
                _ => labels = None,
            }
            offset += g.n();
        }
        offsets.push(offset);

        let mut merged = Graph::from_edges(total, &edges, Matrix::from_vec(total, d, features)?)?;
        if let Some(l) = labels {
            merged = merged.with_node_labels(l)?;
        }
        Ok(Self {
            merged,
            indicator,
            offsets,
            targets: graphs.iter().map(|g| g.target()).collect(),
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.merged
    }

    /// Graph id of every node; non-decreasing.
    pub fn indicator(&self) -> &[usize] {
        &self.indicator
    }

    pub fn graph_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Node range of graph `g` inside the merged graph.
    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    pub fn targets(&self) -> &[Option<Target>] {
        &self.targets
    }

    /// Splits the batch back into its member graphs.
    pub fn unbatch(&self) -> Result<Vec<Graph>> {
        (0..self.graph_count())
            .map(|g| {
                let nodes: Vec<usize> = self.node_range(g).collect();
                let mut sub = self.merged.induced_subgraph(&nodes)?;
                sub.target = self.targets[g];
                Ok(sub)
            })
            .collect()
    }
}
